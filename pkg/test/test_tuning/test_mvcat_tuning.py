"""
Unit tests for the `mvcat_tuning` module: prediction, metrics, grids, folds and parameter selection.
"""

import logging
import math
import os
import sys

import numpy as np
import pytest

# Add the src directory to the PYTHONPATH
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", "src")))

from mvcat.design.mvcat_design import CategoryLayout, CoefficientMatrix, build_design  # noqa: E402
from mvcat.error.mvcat_error import DomainError  # noqa: E402
from mvcat.likelihood.mvcat_likelihood import joint_probabilities, make_dataset  # noqa: E402
from mvcat.solver.mvcat_solver import FitConfig, gamma_max  # noqa: E402
from mvcat.tuning import (  # noqa: E402 - ignore module level import not at top of file due to sys.path.insert
    mvcat_tuning,
)
from mvcat.tuning.mvcat_tuning import TuningGrid  # noqa: E402

FAST = FitConfig(tol=1e-7, max_iterations=2000)


@pytest.fixture
def disagreeing_model():
    """2 x 2 intercept-only model whose joint mode is (1, 1) but whose marginal mode of response 1 is 2."""
    layout = CategoryLayout((2, 2))
    return CoefficientMatrix(np.log([[0.35, 0.3, 0.05, 0.3]]), layout)


def test_kl_divergence():
    assert mvcat_tuning.kl_divergence(np.array([[0.5, 0.5]]), np.array([[0.25, 0.75]])) == pytest.approx(
        0.5 * math.log(2) + 0.5 * math.log(2 / 3)
    )
    P = np.array([[0.2, 0.3, 0.5], [0.1, 0.1, 0.8]])
    assert mvcat_tuning.kl_divergence(P, P) == 0.0
    assert math.isfinite(mvcat_tuning.kl_divergence(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])))
    with pytest.raises(DomainError):
        mvcat_tuning.kl_divergence(P, P[:, :2])


def test_kl_divergence_is_nonnegative(rng):
    for _ in range(50):
        a = rng.dirichlet(np.ones(6), size=4)
        b = rng.dirichlet(np.ones(6), size=4)
        assert mvcat_tuning.kl_divergence(a, b) >= 0.0


def test_joint_and_marginal_predictions_can_disagree(disagreeing_model):
    X = np.ones((3, 1))
    assert mvcat_tuning.predict_joint(disagreeing_model, X).tolist() == [1, 1, 1]
    assert mvcat_tuning.predict_marginal(disagreeing_model, X, 1).tolist() == [2, 2, 2]
    assert mvcat_tuning.predict_marginal(disagreeing_model, X, 2).tolist() == [1, 1, 1]
    assert mvcat_tuning.predict_probabilities(disagreeing_model, X)[0] == pytest.approx([0.35, 0.3, 0.05, 0.3])
    with pytest.raises(DomainError):
        mvcat_tuning.predict_marginal(disagreeing_model, X, 3)
    with pytest.raises(DomainError):
        mvcat_tuning.predict_joint(disagreeing_model, np.ones((3, 2)))


def test_ties_go_to_the_lowest_index():
    beta = CoefficientMatrix.zeros(CategoryLayout((3, 2)), 2)
    X = np.column_stack([np.ones(4), np.arange(4.0)])
    assert mvcat_tuning.predict_joint(beta, X).tolist() == [1, 1, 1, 1]
    assert mvcat_tuning.predict_marginal(beta, X, 1).tolist() == [1, 1, 1, 1]


def test_predict_with_standardization(make_data):
    data, _ = make_data(20, 3)
    beta = CoefficientMatrix(np.arange(18.0).reshape(3, 6) / 10, data.layout)
    raw = data.raw_predictors
    assert np.allclose(
        mvcat_tuning.predict_probabilities(beta, raw, data.standardization),
        mvcat_tuning.predict_probabilities(beta, data.X),
    )


def test_misclassification_rates():
    layout = CategoryLayout((2, 2))
    categories = np.array([[1, 1], [1, 1], [2, 1], [1, 2], [2, 0], [0, 2]])
    data = make_dataset(np.zeros((6, 0)), categories, layout, standardize=False)
    beta = CoefficientMatrix.zeros(layout, 1)
    # every prediction is class 1 = (1, 1), categories 1 and 1
    assert mvcat_tuning.joint_misclassification(beta, data) == pytest.approx(2 / 4)
    assert mvcat_tuning.marginal_misclassification(beta, data, 1) == pytest.approx(2 / 5)
    assert mvcat_tuning.marginal_misclassification(beta, data, 2) == pytest.approx(2 / 5)
    assert mvcat_tuning.deviance(beta, data) == pytest.approx(-2 * (4 * math.log(0.25) + 2 * math.log(0.5)))


def test_misclassification_without_complete_rows_is_nan():
    layout = CategoryLayout((2, 2))
    data = make_dataset(np.zeros((2, 0)), np.array([[1, 0], [0, 2]]), layout, standardize=False)
    assert math.isnan(mvcat_tuning.joint_misclassification(CoefficientMatrix.zeros(layout, 1), data))


def test_metric_report(make_data):
    data, beta = make_data(30, 3)
    model = CoefficientMatrix(beta, data.layout)
    report = mvcat_tuning.metric_report(model, data)
    assert report["kl_divergence"] is None
    assert report["n_evaluated"] == 30
    assert report["n_selected"] == 2
    assert len(report["marginal_misclassification"]) == 2
    truth = joint_probabilities(model, data.X)
    assert mvcat_tuning.metric_report(model, data, truth)["kl_divergence"] == 0.0


def test_tuning_grid_validation():
    grid = TuningGrid((1.0, 0.5), (0.1, 1.0, 10.0))
    assert grid.size == 6
    assert grid.relative_lambda
    with pytest.raises(DomainError):
        TuningGrid((), (1.0,))
    with pytest.raises(DomainError):
        TuningGrid((1.0,), (-1.0,))
    with pytest.raises(DomainError):
        TuningGrid((math.inf,), (1.0,))


def test_default_grid(make_data):
    data, _ = make_data(40, 4)
    design = build_design(data.layout)
    grid = mvcat_tuning.default_grid(data, design, n_gamma=5, n_lambda=3)
    top = gamma_max(data, design)
    assert grid.gammas[0] == pytest.approx(top)
    assert grid.gammas[-1] == pytest.approx(1e-4 * top)
    assert grid.lambdas == pytest.approx((1e-3, 1.0, 1e3))
    assert grid.relative_lambda
    single = mvcat_tuning.default_grid(data, design, n_gamma=1, n_lambda=1)
    assert single.gammas == pytest.approx((top,))
    assert single.lambdas == (1.0,)
    with pytest.raises(DomainError):
        mvcat_tuning.default_grid(data, design, n_gamma=0)


def test_assign_folds_sizes_and_determinism():
    folds = mvcat_tuning.assign_folds(23, 5, seed=7)
    counts = np.bincount(folds, minlength=5)
    assert counts.max() - counts.min() <= 1
    assert counts.sum() == 23
    assert np.array_equal(folds, mvcat_tuning.assign_folds(23, 5, seed=7))
    assert not np.array_equal(folds, mvcat_tuning.assign_folds(23, 5, seed=8))
    assert sorted(mvcat_tuning.assign_folds(6, 6, seed=0).tolist()) == list(range(6))


def test_assign_folds_follow_row_keys(rng):
    keys = np.array([f"subject{i:02d}" for i in range(15)])
    folds = mvcat_tuning.assign_folds(15, 3, seed=1, row_keys=keys)
    order = rng.permutation(15)
    shuffled = mvcat_tuning.assign_folds(15, 3, seed=1, row_keys=keys[order])
    assert np.array_equal(shuffled, folds[order])


@pytest.mark.parametrize("n, k", [(10, 1), (3, 4)])
def test_assign_folds_invalid(n, k):
    with pytest.raises(DomainError):
        mvcat_tuning.assign_folds(n, k, seed=0)


def test_assign_folds_key_count():
    with pytest.raises(DomainError):
        mvcat_tuning.assign_folds(5, 2, seed=0, row_keys=[1, 2, 3])


def test_select_by_validation(make_data):
    data, _ = make_data(120, 4, signal=1.5, seed=5)
    train, valid = data.subset(np.arange(60), restandardize=True), data.subset(np.arange(60, 120))
    design = build_design(data.layout)
    grid = mvcat_tuning.default_grid(train, design, n_gamma=4, n_lambda=2)
    selection = mvcat_tuning.select_by_validation(train, valid, design, grid, FAST)
    assert selection.gamma in grid.gammas
    assert selection.fit.lam == selection.lam
    assert 0.0 <= selection.error <= 1.0
    assert selection.error == pytest.approx(
        mvcat_tuning.joint_misclassification(selection.fit.beta, valid.standardized_with(train.standardization))
    )
    marginal = mvcat_tuning.select_by_validation(train, valid, design, grid, FAST, criterion="marginal")
    assert 0.0 <= marginal.error <= 1.0
    with pytest.raises(DomainError):
        mvcat_tuning.select_by_validation(train, valid, design, grid, FAST, criterion="deviance")


def test_selection_ties_prefer_sparser_models(make_data):
    data, _ = make_data(60, 3, signal=0.0)
    train, valid = data.subset(np.arange(30), restandardize=True), data.subset(np.arange(30, 60))
    design = build_design(data.layout)
    top = gamma_max(train, design)
    # every grid point screens all predictors, so every validation error is the same
    grid = TuningGrid((3 * top, 2 * top), (2.0, 1.0))
    selection = mvcat_tuning.select_by_validation(train, valid, design, grid, FAST)
    assert selection.gamma == pytest.approx(3 * top)
    assert selection.lam == pytest.approx(6 * top)


def test_cross_validate_is_thread_invariant(make_data):
    data, _ = make_data(50, 3, signal=1.5, seed=9)
    design = build_design(data.layout)
    grid = mvcat_tuning.default_grid(data, design, n_gamma=3, n_lambda=2)
    single = mvcat_tuning.cross_validate(data, design, grid, k=4, seed=2, config=FAST, threads=1)
    pooled = mvcat_tuning.cross_validate(data, design, grid, k=4, seed=2, config=FAST, threads=4)
    assert (single.lam, single.gamma) == (pooled.lam, pooled.gamma)
    assert single.grid_errors == pooled.grid_errors
    assert np.array_equal(single.folds, pooled.folds)
    assert len(single.fold_reports) == 4
    assert len(single.grid_errors) == 6
    assert sum(r["n_evaluated"] for r in single.fold_reports) == 50
    best = min(entry["error"] for entry in single.grid_errors)
    chosen = [e for e in single.grid_errors if (e["lambda"], e["gamma"]) == (single.lam, single.gamma)]
    assert chosen[0]["error"] == best


def test_cross_validate_with_column_constant_on_a_training_fold(caplog):
    layout = CategoryLayout((3, 2))
    rng = np.random.default_rng(21)
    raw = rng.standard_normal((40, 3))
    raw[:, 2] = 0.0
    raw[0, 2] = 1.0
    categories = np.column_stack([rng.integers(1, 4, size=40), rng.integers(1, 3, size=40)])
    data = make_dataset(raw, categories, layout)
    design = build_design(layout)
    grid = TuningGrid(gammas=(0.1,), lambdas=(0.1,), relative_lambda=False)
    with caplog.at_level(logging.WARNING):
        result = mvcat_tuning.cross_validate(data, design, grid, k=5, seed=0, config=FAST, threads=1)
    assert "left unscaled: x3" in caplog.text
    assert (result.lam, result.gamma) == (pytest.approx(0.1), pytest.approx(0.1))
    assert sum(r["n_evaluated"] for r in result.fold_reports) == 40
    assert all(math.isfinite(entry["error"]) for entry in result.grid_errors)


def test_cross_validate_warns_about_missing_categories(caplog):
    layout = CategoryLayout((3, 2))
    rng = np.random.default_rng(4)
    categories = np.column_stack([rng.integers(1, 3, size=12), rng.integers(1, 3, size=12)])
    categories[0, 0] = 3
    data = make_dataset(rng.standard_normal((12, 2)), categories, layout)
    design = build_design(layout)
    grid = TuningGrid((0.5,), (1.0,))
    with caplog.at_level(logging.WARNING):
        mvcat_tuning.cross_validate(data, design, grid, k=3, seed=0, config=FAST)
    assert "miss categories [3] of response 1" in caplog.text
