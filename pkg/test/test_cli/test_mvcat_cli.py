"""
Tests for the `mvcat-cli` command line: subcommands, file outputs and exit codes.
"""

import csv
import json
import os
import sys

import numpy as np
import pytest

# Add the src directory to the PYTHONPATH
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", "src")))

from mvcat import cli  # noqa: E402 - ignore module level import not at top of file due to sys.path.insert
from mvcat.file.mvcat_file import load_model, save_dataset_csv  # noqa: E402
from mvcat.simulate.mvcat_simulate import RESULT_COLUMNS  # noqa: E402


@pytest.fixture
def data_files(tmp_path, make_data):
    data, _ = make_data(60, 4, (3, 2), seed=21, signal=1.5)
    x_path, y_path = str(tmp_path / "x.csv"), str(tmp_path / "y.csv")
    save_dataset_csv(data, x_path, y_path)
    return x_path, y_path


def _read_csv(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def test_version(capsys):
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["--version"])
    assert excinfo.value.code == 0
    assert "mvcat-cli" in capsys.readouterr().out


def test_argparse_errors_exit_with_usage_code():
    with pytest.raises(SystemExit) as excinfo:
        cli.main(["fit", "--x", "x.csv"])
    assert excinfo.value.code == 2


@pytest.mark.parametrize("flags", [["--seed", "-1"], ["--threads", "0"]])
def test_invalid_global_options(flags):
    assert cli.main(flags + ["design", "--layout", "2,2"]) == 2


def test_design_output(capsys):
    assert cli.main(["design", "--layout", "2,2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5
    assert lines[0].startswith("class,")
    assert [line.split(",")[0] for line in lines[1:]] == ["1:1", "2:1", "1:2", "2:2"]
    assert [line.split(",")[1] for line in lines[1:]] == ["1", "-1", "-1", "1"]


def test_design_to_file(tmp_path):
    out = tmp_path / "d.csv"
    assert cli.main(["design", "--layout", "3,2", "--out", str(out)]) == 0
    rows = out.read_text().strip().splitlines()
    assert len(rows) == 7
    assert len(rows[0].split(",")) == 4


@pytest.mark.parametrize("layout", ["3", "3;2", "1,2"])
def test_design_invalid_layout(layout):
    assert cli.main(["design", "--layout", layout]) == 2


def test_fit_then_predict(data_files, tmp_path, capsys):
    x_path, y_path = data_files
    model_path = str(tmp_path / "model.json")
    code = cli.main(["--quiet", "fit", "--x", x_path, "--y", y_path, "--lambda", "0.01", "--gamma", "0.02",
                     "--tol", "1e-10", "--out", model_path])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["lambda"] == 0.01 and report["gamma"] == 0.02
    assert report["n_train"] == 60
    assert report["kkt_residual"] < 1e-3

    model = load_model(model_path)
    assert model.metadata["objective_kind"] == "full"
    assert model.predictor_names == ("x1", "x2", "x3")

    out = str(tmp_path / "pred.csv")
    assert cli.main(["--quiet", "predict", "--model", model_path, "--x", x_path, "--out", out]) == 0
    rows = _read_csv(out)
    assert len(rows) == 60
    assert list(rows[0])[:3] == ["joint_class", "y1", "y2"]
    assert "p_3_2" in rows[0]
    for row in rows:
        probabilities = [float(value) for key, value in row.items() if key.startswith("p_")]
        assert sum(probabilities) == pytest.approx(1.0)
        assert int(row["joint_class"]) == int(np.argmax(probabilities)) + 1

    marginal_out = str(tmp_path / "marginal.csv")
    assert cli.main(["--quiet", "predict", "--model", model_path, "--x", x_path, "--marginal",
                     "--out", marginal_out]) == 0
    assert len(_read_csv(marginal_out)) == 60


def test_predict_with_other_columns(data_files, tmp_path):
    x_path, y_path = data_files
    model_path = str(tmp_path / "model.json")
    assert cli.main(["--quiet", "fit", "--x", x_path, "--y", y_path, "--lambda", "0", "--gamma", "0.1",
                     "--out", model_path]) == 0
    other = tmp_path / "other.csv"
    other.write_text("a,b,c\n1,2,3\n")
    assert cli.main(["--quiet", "predict", "--model", model_path, "--x", str(other)]) == 2


def test_fit_drops_or_keeps_partial_rows(data_files, tmp_path, capsys):
    x_path, y_path = data_files
    lines = open(y_path).read().splitlines()
    lines[1] = lines[1].split(",")[0] + ",NA"
    partial = tmp_path / "partial.csv"
    partial.write_text("\n".join(lines) + "\n")
    base = ["--quiet", "fit", "--x", x_path, "--y", str(partial), "--lambda", "0.01", "--gamma", "0.02", "--out"]

    assert cli.main(base + [str(tmp_path / "cc.json")]) == 0
    assert json.loads(capsys.readouterr().out)["n_train"] == 59
    assert cli.main(base + [str(tmp_path / "semi.json"), "--semi"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n_train"] == 60
    assert report["objective_kind"] == "observed"


def test_data_errors_exit_with_data_code(data_files, tmp_path):
    x_path, y_path = data_files
    assert cli.main(["fit", "--x", str(tmp_path / "missing.csv"), "--y", y_path, "--lambda", "0", "--gamma", "0",
                     "--out", str(tmp_path / "m.json")]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text("{\"format_version\": 1")
    assert cli.main(["predict", "--model", str(bad), "--x", x_path]) == 3


def test_negative_penalty_is_a_usage_error(data_files, tmp_path):
    x_path, y_path = data_files
    assert cli.main(["fit", "--x", x_path, "--y", y_path, "--lambda", "-1", "--gamma", "0",
                     "--out", str(tmp_path / "m.json")]) == 2


def test_cv(data_files, tmp_path):
    x_path, y_path = data_files
    out, model_out = str(tmp_path / "cv.json"), str(tmp_path / "cv_model.json")
    code = cli.main(["--quiet", "--threads", "2", "cv", "--x", x_path, "--y", y_path, "--k", "3", "--n-gamma", "2",
                     "--n-lambda", "2", "--tol", "1e-6", "--model-out", model_out, "--out", out])
    assert code == 0
    report = json.load(open(out))
    assert report["k"] == 3
    assert report["grid_size"] == 4
    assert len(report["fold_reports"]) == 3
    assert len(report["grid_errors"]) == 4
    assert report["model"]["lambda"] == report["lambda"]
    assert load_model(model_out).metadata["selected_by"] == "3-fold cv"


def test_cv_with_explicit_grid(data_files, tmp_path):
    x_path, y_path = data_files
    out = str(tmp_path / "cv.json")
    code = cli.main(["--quiet", "cv", "--x", x_path, "--y", y_path, "--k", "2", "--gammas", "0.05,0.01",
                     "--lambdas", "0,0.02", "--absolute-lambda", "--criterion", "marginal", "--out", out])
    assert code == 0
    report = json.load(open(out))
    assert report["lambda"] in (0.0, 0.02)
    assert report["gamma"] in (0.05, 0.01)
    assert report["criterion"] == "marginal"


SIMULATE = ["simulate", "--model", "2", "--p", "12", "--n-train", "40", "--n-valid", "40", "--n-test", "100",
            "--replicates", "2", "--n-gamma", "2", "--n-lambda", "2", "--tol", "1e-6", "--max-iter", "300",
            "--methods", "LO-Mult,Sep,Oracle", "--no-timing"]


def test_simulate_is_reproducible(tmp_path, capsys):
    first, second = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    assert cli.main(["--quiet", "--seed", "7"] + SIMULATE + ["--out", first]) == 0
    assert "LO-Mult" in capsys.readouterr().out
    assert cli.main(["--quiet", "--seed", "7", "--threads", "2"] + SIMULATE + ["--out", second]) == 0
    assert open(first, "rb").read() == open(second, "rb").read()
    rows = _read_csv(first)
    assert list(rows[0]) == RESULT_COLUMNS
    assert len(rows) == 6
    assert all(float(row["kl"]) == 0.0 for row in rows if row["method"] == "Oracle")


def test_simulate_masking_methods(tmp_path):
    out = str(tmp_path / "semi.csv")
    args = SIMULATE + ["--methods", "LO-Semi,LO-Complete", "--mask-share", "0.5", "--out", out]
    assert cli.main(["--quiet"] + args) == 0
    rows = _read_csv(out)
    assert [row["method"] for row in rows] == ["LO-Semi", "LO-Complete"] * 2
    assert cli.main(["--quiet"] + SIMULATE + ["--mask-share", "1.0"]) == 2


def test_simulate_dumps_data(tmp_path):
    dump = tmp_path / "dump"
    assert cli.main(["--quiet"] + SIMULATE + ["--methods", "Oracle", "--dump-data", str(dump),
                                               "--out", str(tmp_path / "r.csv")]) == 0
    assert sorted(os.listdir(dump)) == sorted(
        f"{split}_{part}.csv" for split in ("train", "valid", "test") for part in ("x", "y")
    )
    assert len(_read_csv(dump / "test_y.csv")) == 100


def test_simulate_errors():
    assert cli.main(SIMULATE + ["--methods", "Lasso"]) == 2
    assert cli.main(SIMULATE + ["--layout", "2,2"]) == 2
    assert cli.main(SIMULATE + ["--p", "5"]) == 2


def test_screen(tmp_path, capsys, rng):
    classes = np.repeat([1, 2, 3], 10)
    signal = classes + 0.1 * rng.standard_normal(30)
    X = np.column_stack([rng.standard_normal(30), signal, signal + 1e-3 * rng.standard_normal(30)])
    x_path, y_path = tmp_path / "x.csv", tmp_path / "y.csv"
    x_path.write_text("g1,g2,g3\n" + "\n".join(",".join(repr(float(v)) for v in row) for row in X) + "\n")
    y_path.write_text("y1,y2\n" + "\n".join(f"{c},{1 + i % 2}" for i, c in enumerate(classes)) + "\n")
    out = tmp_path / "reduced.csv"
    assert cli.main(["--quiet", "screen", "--x", str(x_path), "--y", str(y_path), "--keep-top", "3",
                     "--out", str(out)]) == 0
    selection = json.loads(capsys.readouterr().out)
    assert selection["n_candidates"] == 3
    assert selection["n_selected"] == 2
    assert out.read_text().splitlines()[0] == ",".join(selection["selected"])


def test_normalize(tmp_path, capsys):
    counts = tmp_path / "counts.csv"
    counts.write_text("subject,g1,g2,g3\ns1,30,40,1\ns2,50,20,2\ns3,25,60,0\n")
    assert cli.main(["--quiet", "normalize", "--counts", str(counts), "--min-q75", "20"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "g1,g2"
    assert len(lines) == 4
    empty = tmp_path / "zeros.csv"
    empty.write_text("g1,g2\n0,0\n0,0\n")
    assert cli.main(["--quiet", "normalize", "--counts", str(empty), "--min-q75", "1"]) == 3


def test_prox_selftest(capsys):
    assert cli.main(["--quiet", "prox-selftest", "--trials", "20", "--max-categories", "3"]) == 0
    out = capsys.readouterr().out
    assert "max_oracle_deviation" in out
    assert "screened" in out
    assert cli.main(["--quiet", "prox-selftest", "--trials", "0"]) == 2
