"""
mvcat-cli - command-line surface of the package.

Sub-commands:
    fit: Fit one model at a given (lambda, gamma) and save it.
    predict: Joint and per-response predictions of a saved model.
    cv: Select (lambda, gamma) by k-fold cross-validation, optionally refit and save.
    simulate: Run replicate experiments of a simulation model and write the results CSV.
    design: Write the log odds ratio contrast matrix of a layout.
    screen: ANOVA F screening and correlation pruning of predictor columns.
    normalize: Gene filter and upper-quartile log transform of a count table.
    prox-selftest: Compare the closed-form prox with the reference solver.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

import argparse
import os
import sys

import numpy as np

from mvcat import __version__
from mvcat.console.mvcat_console import pretty_json, render_table
from mvcat.design.mvcat_design import CategoryLayout, build_design, class_categories, class_index, class_table
from mvcat.error.mvcat_error import EXIT_OK, EXIT_USAGE, MvcatError, NumericError, UsageError
from mvcat.file.mvcat_file import (
    DEFAULT_MIN_Q75,
    expression_normalize,
    load_counts,
    load_dataset,
    load_model,
    load_predictors,
    save_dataset_csv,
    save_model,
    screen_features,
)
from mvcat.likelihood.mvcat_likelihood import Dataset
from mvcat.log.mvcat_logger import logger, set_log_level
from mvcat.prox.mvcat_prox import run_selftest
from mvcat.simulate.mvcat_simulate import (
    ALL_METHODS,
    DEFAULT_MASK_SHARE,
    DEFAULT_REPLICATES,
    METHODS,
    RESULT_COLUMNS,
    SimConfig,
    error_decay,
    generate_replicate,
    run_experiment,
    summarize,
)
from mvcat.solver.mvcat_solver import DEFAULT_MAX_ITERATIONS, DEFAULT_TOL, FitConfig, fit, kkt_residual
from mvcat.string.mvcat_string import matrix_to_csv_str, parse_float_list, parse_layout, rows_to_csv_str
from mvcat.tuning.mvcat_tuning import (
    DEFAULT_N_GAMMA,
    DEFAULT_N_LAMBDA,
    DEFAULT_THREADS,
    TuningGrid,
    cross_validate,
    default_grid,
    predict_marginal,
    predict_probabilities,
)

#######################
# Constants definitions
#######################

SELFTEST_TOLERANCE = 1e-6


######################
# Function definitions
######################


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as output_file:
            output_file.write(text)
        logger.info(f"Wrote '{out}'")
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def _print_report(report: dict, out: str | None = None) -> None:
    if out:
        _write_or_print(pretty_json(report, indent=2, colored=False) + "\n", out)
    else:
        print(pretty_json(report, indent=2, colored=sys.stdout.isatty()))


def _layout(text: str | None) -> CategoryLayout | None:
    return CategoryLayout(parse_layout(text)) if text else None


def _training_data(args: argparse.Namespace) -> Dataset:
    """Load the data; without --semi, rows with a missing response are left out."""
    data = load_dataset(args.x, args.y, _layout(args.layout))
    if not args.semi and not data.fully_observed:
        complete = data.complete_rows
        n_complete = int(complete.sum())
        logger.warning(
            f"Fitting on {n_complete} complete row(s); pass --semi to use the {data.n - n_complete} partial one(s)"
        )
        data = data.subset(complete, restandardize=True)
    return data


def _fit_config(args: argparse.Namespace, lam: float = 0.0, gamma: float = 0.0) -> FitConfig:
    return FitConfig(
        lam=lam,
        gamma=gamma,
        max_iterations=args.max_iter,
        tol=args.tol,
        objective_kind="observed" if args.semi else "full",
        accelerate=not args.no_accelerate,
        penalty=args.penalty,
    )


def _save_fit(path: str, data: Dataset, config: FitConfig, extra: dict | None = None) -> dict:
    design = build_design(data.layout)
    result = fit(data, design, config)
    residual = kkt_residual(result.beta, data, design, config.lam, config.gamma, config.objective_kind, config.penalty)
    metadata = {
        "lambda": config.lam,
        "gamma": config.gamma,
        "objective_kind": config.objective_kind,
        "penalty": config.penalty,
        "objective": result.objective,
        "iterations": result.iterations,
        "converged": result.converged,
        "kkt_residual": residual,
        "partition": result.partition.as_dict(),
        "n_train": data.n,
        **(extra or {}),
    }
    save_model(path, result.beta, data.standardization, data.predictor_names, metadata)
    return metadata


def cmd_fit(args: argparse.Namespace) -> int:
    data = _training_data(args)
    metadata = _save_fit(args.out, data, _fit_config(args, args.lam, args.gamma))
    _print_report(metadata)
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    names, raw = load_predictors(args.x)
    if model.predictor_names and tuple(names) != model.predictor_names:
        raise UsageError(f"Predictor columns of '{args.x}' do not match the model's {list(model.predictor_names)}")
    layout = model.beta.layout
    P = predict_probabilities(model.beta, raw, model.standardization)
    joint = np.argmax(P, axis=1) + 1
    if args.marginal:
        categories = np.column_stack(
            [predict_marginal(model.beta, raw, g, model.standardization) for g in range(1, layout.n_responses + 1)]
        )
    else:
        categories = class_table(layout)[joint - 1]

    header = ["joint_class"] + [f"y{g}" for g in range(1, layout.n_responses + 1)]
    header += ["p_" + "_".join(map(str, class_categories(layout, c))) for c in range(1, layout.total_classes + 1)]
    rows = [
        dict(zip(header, [int(joint[i])] + [int(v) for v in categories[i]] + [float(v) for v in P[i]]))
        for i in range(P.shape[0])
    ]
    _write_or_print(rows_to_csv_str(rows, header), args.out)
    return EXIT_OK


def _grid(args: argparse.Namespace, data: Dataset) -> TuningGrid:
    design = build_design(data.layout)
    kind = "observed" if args.semi else "full"
    grid = default_grid(data, design, args.n_gamma, args.n_lambda, kind, args.penalty)
    if args.gammas or args.lambdas:
        gammas = tuple(parse_float_list(args.gammas)) if args.gammas else grid.gammas
        lambdas = tuple(parse_float_list(args.lambdas)) if args.lambdas else grid.lambdas
        grid = TuningGrid(gammas, lambdas, relative_lambda=not args.absolute_lambda)
    return grid


def cmd_cv(args: argparse.Namespace) -> int:
    data = _training_data(args)
    design = build_design(data.layout)
    grid = _grid(args, data)
    config = _fit_config(args)
    result = cross_validate(data, design, grid, args.k, args.seed, config, args.threads, criterion=args.criterion)
    report: dict = {
        "lambda": result.lam,
        "gamma": result.gamma,
        "k": args.k,
        "seed": args.seed,
        "criterion": args.criterion,
        "grid_size": grid.size,
        "fold_reports": result.fold_reports,
        "grid_errors": result.grid_errors,
    }
    if args.model_out:
        selected = config.with_penalties(result.lam, result.gamma)
        report["model"] = _save_fit(args.model_out, data, selected, {"selected_by": f"{args.k}-fold cv"})
    _print_report(report, args.out)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise UsageError(f"Unknown method(s) {unknown}; choose from {list(ALL_METHODS)}")
    sim = SimConfig(
        model_id=args.model,
        p=args.p,
        n_train=args.n_train,
        n_valid=args.n_valid,
        n_test=args.n_test,
        cardinalities=parse_layout(args.layout),
        replicates=args.replicates,
        seed=args.seed,
        n_gamma=args.n_gamma,
        n_lambda=args.n_lambda,
        mask_share=args.mask_share,
    )
    config = FitConfig(max_iterations=args.max_iter, tol=args.tol)

    if args.dump_data:
        os.makedirs(args.dump_data, exist_ok=True)
        data = generate_replicate(sim, 0)
        for name, split in (("train", data.train), ("valid", data.valid), ("test", data.test)):
            save_dataset_csv(
                split, os.path.join(args.dump_data, f"{name}_x.csv"), os.path.join(args.dump_data, f"{name}_y.csv")
            )
        logger.info(f"Replicate 0 data written to '{args.dump_data}'")

    if args.decay:
        sizes = tuple(int(n) for n in parse_float_list(args.decay))
        decay = error_decay(sim, sizes, methods[0], config, args.threads)
        _print_report({"method": methods[0], "median_frobenius_err": decay}, args.out)
        return EXIT_OK

    rows = run_experiment(sim, methods, config, args.threads, timing=not args.no_timing)
    _write_or_print(rows_to_csv_str(rows, RESULT_COLUMNS), args.out)
    if args.out:
        print(render_table(summarize(rows)))
    return EXIT_OK


def cmd_design(args: argparse.Namespace) -> int:
    layout = CategoryLayout(parse_layout(args.layout))
    design = build_design(layout)
    labels = [":".join(map(str, class_categories(layout, c))) for c in range(1, layout.total_classes + 1)]
    _write_or_print(matrix_to_csv_str(design.D, list(design.labels), labels, "class"), args.out)
    logger.info(f"Layout {layout}: {design.n_contrasts} contrasts, rank {design.rank}")
    return EXIT_OK


def cmd_screen(args: argparse.Namespace) -> int:
    data = load_dataset(args.x, args.y, _layout(args.layout), standardize=False)
    complete = data.complete_rows
    joint = np.array([class_index(data.layout, tuple(row)) for row in data.categories[complete]])
    selected = screen_features(data.raw_predictors[complete], joint, args.keep_top, args.max_abs_corr)
    names = [data.predictor_names[c] for c in selected]
    _write_or_print(matrix_to_csv_str(data.raw_predictors[:, selected], names), args.out)
    if args.out:
        _print_report({"selected": names, "n_selected": len(names), "n_candidates": data.p - 1})
    return EXIT_OK


def cmd_normalize(args: argparse.Namespace) -> int:
    subjects, genes, counts = load_counts(args.counts)
    values, kept = expression_normalize(counts, args.min_q75, subjects)
    _write_or_print(matrix_to_csv_str(values, [genes[g] for g in kept]), args.out)
    return EXIT_OK


def cmd_prox_selftest(args: argparse.Namespace) -> int:
    report = run_selftest(args.trials, args.seed, args.max_categories)
    print(render_table([{key: value for key, value in report.items() if key != "case_counts"}], float_format=".3g"))
    print(render_table([report["case_counts"]]))
    worst = max(report["max_oracle_deviation"], report["max_2x2_deviation"])
    if worst > SELFTEST_TOLERANCE:
        raise NumericError(f"Closed-form prox deviates from the reference solver by {worst:.3g}")
    return EXIT_OK


def _add_fit_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--x", required=True, help="Predictor CSV.")
    parser.add_argument("--y", required=True, help="Response CSV (categories, NA where missing).")
    parser.add_argument("--layout", help="Category counts such as 3,2. Inferred from the responses if omitted.")
    parser.add_argument("--semi", action="store_true", help="Use rows with a missing response (observed likelihood).")
    parser.add_argument("--penalty", choices=["log_odds", "lasso"], default="log_odds", help="Penalty family.")
    parser.add_argument("--tol", type=float, default=DEFAULT_TOL, help="Relative objective tolerance.")
    parser.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITERATIONS, help="Iteration cap per fit.")
    parser.add_argument("--no-accelerate", action="store_true", help="Plain proximal gradient, monotone objective.")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with every sub-command."""
    parser = argparse.ArgumentParser(
        prog="mvcat-cli", description="Penalized likelihood models for multivariate categorical responses"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=0, help="Seed for folds, simulations and self-tests.")
    parser.add_argument("--threads", type=int, default=DEFAULT_THREADS, help="Worker threads.")
    parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors.")
    sub = parser.add_subparsers(dest="command", required=True)

    fit_parser = sub.add_parser("fit", help="Fit one model and save it as JSON.")
    _add_fit_options(fit_parser)
    fit_parser.add_argument("--lambda", dest="lam", type=float, required=True, help="Log odds ratio penalty.")
    fit_parser.add_argument("--gamma", type=float, required=True, help="Group penalty.")
    fit_parser.add_argument("--out", required=True, help="Model file.")
    fit_parser.set_defaults(handler=cmd_fit)

    predict_parser = sub.add_parser("predict", help="Predict with a saved model.")
    predict_parser.add_argument("--model", required=True, help="Model file written by fit or cv.")
    predict_parser.add_argument("--x", required=True, help="Predictor CSV with the training columns.")
    predict_parser.add_argument("--marginal", action="store_true", help="Per-response columns from the marginals.")
    predict_parser.add_argument("--out", help="Output CSV. Printed if omitted.")
    predict_parser.set_defaults(handler=cmd_predict)

    cv_parser = sub.add_parser("cv", help="Select lambda and gamma by k-fold cross-validation.")
    _add_fit_options(cv_parser)
    cv_parser.add_argument("--k", type=int, default=5, help="Number of folds.")
    cv_parser.add_argument("--n-gamma", type=int, default=DEFAULT_N_GAMMA, help="Default grid: gamma values.")
    cv_parser.add_argument("--n-lambda", type=int, default=DEFAULT_N_LAMBDA, help="Default grid: lambda multipliers.")
    cv_parser.add_argument("--gammas", help="Comma separated gamma values instead of the default grid.")
    cv_parser.add_argument("--lambdas", help="Comma separated lambda / gamma multipliers.")
    cv_parser.add_argument("--absolute-lambda", action="store_true", help="--lambdas are absolute values.")
    cv_parser.add_argument("--criterion", choices=["joint", "marginal"], default="joint", help="Selection error.")
    cv_parser.add_argument("--model-out", help="Refit at the selection on all rows and save the model here.")
    cv_parser.add_argument("--out", help="Report JSON. Printed if omitted.")
    cv_parser.set_defaults(handler=cmd_cv)

    sim_parser = sub.add_parser("simulate", help="Run a simulation study.")
    sim_parser.add_argument("--model", type=int, required=True, choices=[1, 2, 3, 4], help="Simulation model.")
    sim_parser.add_argument("--p", type=int, default=100, help="Predictors besides the intercept.")
    sim_parser.add_argument("--n-train", type=int, default=300)
    sim_parser.add_argument("--n-valid", type=int, default=500)
    sim_parser.add_argument("--n-test", type=int, default=10_000)
    sim_parser.add_argument("--layout", default="3,2", help="Bivariate layout; models 2-4 need 3,2.")
    sim_parser.add_argument("--replicates", type=int, default=DEFAULT_REPLICATES)
    sim_parser.add_argument(
        "--methods", default=",".join(METHODS), help="Comma separated methods; LO-Semi and LO-Complete on request."
    )
    sim_parser.add_argument(
        "--mask-share", type=float, default=DEFAULT_MASK_SHARE, help="Training rows whose response 2 is hidden."
    )
    sim_parser.add_argument("--n-gamma", type=int, default=DEFAULT_N_GAMMA)
    sim_parser.add_argument("--n-lambda", type=int, default=DEFAULT_N_LAMBDA)
    sim_parser.add_argument("--tol", type=float, default=DEFAULT_TOL)
    sim_parser.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITERATIONS)
    sim_parser.add_argument("--no-timing", action="store_true", help="Write 0 seconds, for byte-identical output.")
    sim_parser.add_argument("--dump-data", help="Directory for the CSV files of replicate 0.")
    sim_parser.add_argument("--decay", help="Comma separated training sizes: report the median Frobenius error.")
    sim_parser.add_argument("--out", help="Results CSV. Printed if omitted.")
    sim_parser.set_defaults(handler=cmd_simulate)

    design_parser = sub.add_parser("design", help="Write the contrast matrix of a layout.")
    design_parser.add_argument("--layout", required=True, help="Category counts such as 3,2 or 2,2,2.")
    design_parser.add_argument("--out", help="Output CSV. Printed if omitted.")
    design_parser.set_defaults(handler=cmd_design)

    screen_parser = sub.add_parser("screen", help="Screen predictors by ANOVA F and prune correlated ones.")
    screen_parser.add_argument("--x", required=True)
    screen_parser.add_argument("--y", required=True)
    screen_parser.add_argument("--layout")
    screen_parser.add_argument("--keep-top", type=int, default=500, help="Columns kept by F before pruning.")
    screen_parser.add_argument("--max-abs-corr", type=float, default=0.75, help="Pruning threshold in (0, 1].")
    screen_parser.add_argument("--out", help="Reduced predictor CSV. Printed if omitted.")
    screen_parser.set_defaults(handler=cmd_screen)

    normalize_parser = sub.add_parser("normalize", help="Filter and log-transform a count table.")
    normalize_parser.add_argument("--counts", required=True, help="Counts CSV, subjects by genes.")
    normalize_parser.add_argument("--min-q75", type=float, default=DEFAULT_MIN_Q75, help="Gene filter threshold.")
    normalize_parser.add_argument("--out", help="Predictor CSV. Printed if omitted.")
    normalize_parser.set_defaults(handler=cmd_normalize)

    selftest_parser = sub.add_parser("prox-selftest", help="Check the closed-form prox on random problems.")
    selftest_parser.add_argument("--trials", type=int, default=1000)
    selftest_parser.add_argument("--max-categories", type=int, default=4)
    selftest_parser.set_defaults(handler=cmd_prox_selftest)

    return parser


######
# Main
######


def main(argv: list[str] | None = None) -> int:
    """
    Entry point of mvcat-cli.

    Args:
        argv (list[str], optional): Arguments without the program name. Defaults to sys.argv[1:].

    Returns:
        int: Exit code. Usage errors found by argparse exit with code 2 directly.
    """

    args = build_parser().parse_args(argv)
    if args.quiet:
        set_log_level("WARNING")
    if args.seed < 0:
        logger.error("--seed must be nonnegative")
        return EXIT_USAGE
    if args.threads < 1:
        logger.error("--threads must be at least 1")
        return EXIT_USAGE

    try:
        return args.handler(args)
    except MvcatError as exc:
        logger.error(str(exc))
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
