"""
Unit tests for the `mvcat_likelihood` module: datasets, joint probabilities, full and observed-data likelihoods.
"""

import logging
import math
import os
import sys

import numpy as np
import pytest

# Add the src directory to the PYTHONPATH
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", "src")))

from mvcat.design.mvcat_design import CategoryLayout, build_design, class_index  # noqa: E402
from mvcat.error.mvcat_error import ContractViolationError, DataError, DomainError, NumericError  # noqa: E402
from mvcat.likelihood import (  # noqa: E402 - ignore module level import not at top of file due to sys.path.insert
    mvcat_likelihood,
)
from mvcat.likelihood.mvcat_likelihood import Standardization, make_dataset  # noqa: E402


def _central_differences(function, beta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    numeric = np.zeros_like(beta)
    for index in np.ndindex(beta.shape):
        plus, minus = beta.copy(), beta.copy()
        plus[index] += step
        minus[index] -= step
        numeric[index] = (function(plus) - function(minus)) / (2 * step)
    return numeric


@pytest.fixture
def masked_data(make_data):
    """n=20, p=4, 3 x 2 data with 30% of each response masked on disjoint rows."""
    data, beta = make_data(20, 4, (3, 2), seed=3)
    data = data.with_missing(1, np.arange(0, 6)).with_missing(2, np.arange(6, 12))
    return data, beta


def test_indicator_matrix():
    layout = CategoryLayout((3, 2))
    Y = mvcat_likelihood.indicator_matrix(layout, np.array([[2, 1], [0, 2], [3, 0]]))
    assert Y[0].tolist() == [0, 1, 0, 0, 0, 0]
    assert Y[0, class_index(layout, (2, 1)) - 1] == 1
    # response 2 = 2 observed only: every class with k = 2
    assert Y[1].tolist() == [0, 0, 0, 1, 1, 1]
    assert Y[2].tolist() == [0, 0, 1, 0, 0, 1]
    with pytest.raises(DomainError):
        mvcat_likelihood.indicator_matrix(layout, np.array([[4, 1]]))


def test_standardization_fit():
    raw = np.array([[1.0, 10.0], [2.0, 20.0], [3.0, 60.0], [6.0, 30.0]])
    record = Standardization.fit(raw)
    X = record.apply(raw)
    assert np.array_equal(X[:, 0], np.ones(4))
    assert np.allclose(X[:, 1:].mean(axis=0), 0.0)
    assert np.allclose((X[:, 1:] ** 2).sum(axis=0), 4.0, atol=1e-9)
    assert record.as_dict()["center"] == pytest.approx([3.0, 30.0])
    with pytest.raises(DomainError):
        record.apply(np.ones((2, 3)))


def test_standardization_constant_columns_are_named():
    raw = np.column_stack([np.ones(5), np.arange(5.0), np.full(5, 2.0)])
    with pytest.raises(DataError) as excinfo:
        Standardization.fit(raw, ("age", "gene1", "stage"))
    assert "age" in str(excinfo.value)
    assert "stage" in str(excinfo.value)
    assert "gene1" not in str(excinfo.value)


def test_standardization_allow_constant_keeps_center(caplog):
    raw = np.column_stack([np.arange(5.0), np.full(5, 2.0)])
    with caplog.at_level(logging.WARNING):
        record = Standardization.fit(raw, ("gene1", "stage"), allow_constant=True)
    assert "left unscaled: stage" in caplog.text
    assert record.center.tolist() == [2.0, 2.0]
    assert record.scale[1] == 1.0
    X = record.apply(np.array([[2.0, 3.0]]))
    assert X[0].tolist() == [1.0, 0.0, 1.0]


def test_make_dataset_drops_rows_without_responses(caplog):
    raw = np.arange(8.0).reshape(4, 2) ** 1.5
    categories = np.array([[1, 2], [0, 0], [3, 0], [2, 1]])
    with caplog.at_level(logging.WARNING):
        data = make_dataset(raw, categories, CategoryLayout((3, 2)))
    assert data.n == 3
    assert "Dropped 1 row" in caplog.text
    assert data.observed_1.tolist() == [True, True, True]
    assert data.observed_2.tolist() == [True, False, True]
    assert not data.fully_observed
    assert data.predictor_names == ("x1", "x2")


def test_make_dataset_errors():
    layout = CategoryLayout((2, 2))
    with pytest.raises(DataError):
        make_dataset(np.ones((2, 1)), np.zeros((2, 2), dtype=int), layout)
    with pytest.raises(DomainError):
        make_dataset(np.ones((3, 1)), np.ones((2, 2), dtype=int), layout)
    with pytest.raises(DataError):
        make_dataset(np.array([[1.0], [np.nan]]), np.ones((2, 2), dtype=int), layout, standardize=False)


def test_dataset_subset_restandardizes(make_data):
    data, _ = make_data(30, 3)
    rows = np.arange(10)
    kept = data.subset(rows)
    assert np.array_equal(kept.X, data.X[rows])
    refit = data.subset(rows, restandardize=True)
    assert np.allclose((refit.X[:, 1:] ** 2).sum(axis=0), 10.0, atol=1e-9)
    other = data.subset(np.arange(10, 30)).standardized_with(refit.standardization)
    assert np.allclose(other.X, refit.standardization.apply(data.raw_predictors[10:]))


def test_with_missing_invalid_response(make_data):
    data, _ = make_data(10, 2)
    with pytest.raises(DomainError):
        data.with_missing(3, np.arange(2))


def test_joint_probabilities_uniform_and_stochastic(rng):
    X = np.column_stack([np.ones(5), rng.standard_normal((5, 2))])
    P = mvcat_likelihood.joint_probabilities(np.zeros((3, 6)), X)
    assert np.allclose(P, 1 / 6)
    beta = rng.standard_normal((3, 6)) * 3
    P = mvcat_likelihood.joint_probabilities(beta, X)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((P > 0) & (P < 1))


def test_joint_probabilities_softmax_example():
    P = mvcat_likelihood.joint_probabilities(np.log([[1.0, 2.0, 3.0, 4.0]]), np.ones((1, 1)))
    assert P[0] == pytest.approx([0.1, 0.2, 0.3, 0.4], abs=1e-12)


def test_joint_probabilities_large_values_are_stable():
    beta = np.array([[1000.0, 999.0, 0.0, -1000.0]])
    P = mvcat_likelihood.joint_probabilities(beta, np.ones((1, 1)))
    assert np.isfinite(P).all()
    assert P[0, 0] == pytest.approx(1 / (1 + math.exp(-1)))


def test_shift_invariance(make_data, rng):
    data, beta = make_data(15, 4)
    shifted = beta - rng.standard_normal(4)[:, None]
    assert np.allclose(
        mvcat_likelihood.joint_probabilities(beta, data.X),
        mvcat_likelihood.joint_probabilities(shifted, data.X),
        atol=1e-12,
    )
    assert mvcat_likelihood.nll(beta, data) == pytest.approx(mvcat_likelihood.nll(shifted, data), abs=1e-12)


def test_linear_predictor_errors():
    with pytest.raises(NumericError) as excinfo:
        mvcat_likelihood.linear_predictor(np.ones((2, 4)), np.array([[1.0, 0.0], [1.0, np.inf]]))
    assert excinfo.value.row == 1
    with pytest.raises(DomainError):
        mvcat_likelihood.linear_predictor(np.ones((3, 4)), np.ones((2, 2)))


def test_nll_values(make_data):
    data, _ = make_data(12, 3)
    assert mvcat_likelihood.nll(np.zeros((3, 6)), data) == pytest.approx(math.log(6))

    layout = CategoryLayout((2, 2))
    single = make_dataset(np.zeros((1, 0)), np.array([[1, 1]]), layout, standardize=False)
    beta = np.log([[1.0, 1 / 3, 1 / 3, 1 / 3]])  # pi_1 = 0.5
    assert mvcat_likelihood.nll(beta, single) == pytest.approx(math.log(2))


def test_full_likelihood_rejects_missing(masked_data):
    data, beta = masked_data
    with pytest.raises(ContractViolationError):
        mvcat_likelihood.nll(beta, data)
    with pytest.raises(ContractViolationError):
        mvcat_likelihood.gradient(beta, data)
    with pytest.raises(ContractViolationError):
        mvcat_likelihood.loss(beta, data, "full")


def test_gradient_matches_finite_differences(make_data):
    data, beta = make_data(20, 4, (3, 2), seed=1)
    analytic = mvcat_likelihood.gradient(beta, data)
    numeric = _central_differences(lambda b: mvcat_likelihood.nll(b, data), beta)
    assert np.allclose(analytic, numeric, rtol=1e-6, atol=1e-8)
    # (P - Y) 1 = 0, so every row of the gradient sums to zero
    assert np.allclose(analytic.sum(axis=1), 0.0, atol=1e-12)


def test_observed_gradient_matches_finite_differences(masked_data):
    data, beta = masked_data
    analytic = mvcat_likelihood.observed_gradient(beta, data)
    numeric = _central_differences(lambda b: mvcat_likelihood.observed_nll(b, data), beta)
    assert np.allclose(analytic, numeric, rtol=1e-6, atol=1e-8)


def test_observed_reduces_to_full(make_data):
    data, beta = make_data(25, 3, (2, 3), seed=4)
    assert mvcat_likelihood.observed_nll(beta, data) == pytest.approx(mvcat_likelihood.nll(beta, data), abs=1e-12)
    observed = mvcat_likelihood.observed_gradient(beta, data)
    assert np.allclose(observed, mvcat_likelihood.gradient(beta, data), atol=1e-12)


def test_observed_nll_marginal_row():
    layout = CategoryLayout((3, 2))
    data = make_dataset(np.zeros((1, 0)), np.array([[2, 0]]), layout, standardize=False)
    assert mvcat_likelihood.observed_nll(np.zeros((1, 6)), data) == pytest.approx(math.log(3))


def test_masking_never_increases_a_row_contribution(make_data):
    data, beta = make_data(10, 3, seed=8)
    masked = data.with_missing(2, np.arange(10))
    full_rows = mvcat_likelihood.row_log_likelihood(beta, data)
    masked_rows = mvcat_likelihood.row_log_likelihood(beta, masked)
    assert np.all(masked_rows >= full_rows - 1e-12)


def test_observed_gradient_q_entries():
    """J = K = 2, beta = 0, response 1 = 1 observed: Q = 1/4 at (1, k), -1/4 elsewhere."""
    layout = CategoryLayout((2, 2))
    data = make_dataset(np.zeros((1, 0)), np.array([[1, 0]]), layout, standardize=False)
    gradient = mvcat_likelihood.observed_gradient(np.zeros((1, 4)), data)
    Q = -gradient[0]  # n = 1, x = (1)
    expected = np.array([0.25, -0.25, 0.25, -0.25])  # classes (1,1), (2,1), (1,2), (2,2)
    assert Q == pytest.approx(expected)


def test_loss_dispatch_invalid(make_data):
    data, beta = make_data(5, 2)
    with pytest.raises(DomainError):
        mvcat_likelihood.loss(beta, data, "partial")
    with pytest.raises(DomainError):
        mvcat_likelihood.loss_gradient(beta, data, "partial")


def test_conditional_and_marginal_probabilities(make_data, rng):
    data, beta = make_data(8, 3, (3, 2))
    uniform = mvcat_likelihood.conditional_and_marginal_probabilities(np.zeros((3, 6)), data.X, data.layout)
    assert np.allclose(uniform.marginal_1, 1 / 3)
    assert np.allclose(uniform.cond_2_given_1, 1 / 2)

    probabilities = mvcat_likelihood.conditional_and_marginal_probabilities(beta, data.X, data.layout)
    assert np.allclose(probabilities.marginal_1.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(probabilities.cond_2_given_1.sum(axis=2), 1.0, atol=1e-12)
    assert np.allclose(probabilities.cond_1_given_2.sum(axis=1), 1.0, atol=1e-12)
    joint = probabilities.cond_2_given_1 * probabilities.marginal_1[:, :, None]
    P = mvcat_likelihood.joint_probabilities(beta, data.X)
    assert np.allclose(joint[:, 1, 0], P[:, 1], atol=1e-12)
    with pytest.raises(DomainError):
        mvcat_likelihood.conditional_and_marginal_probabilities(
            np.zeros((1, 8)), np.ones((1, 1)), CategoryLayout((2, 2, 2))
        )


def test_null_space_rows_give_independent_responses(rng):
    """A row with D'beta_m = 0 (and nothing else nonzero) makes the joint pmf factorize."""
    layout = CategoryLayout((3, 2))
    design = build_design(layout)
    row = rng.standard_normal(6)
    row = design.proj_null @ row
    beta = np.vstack([np.zeros(6), row])
    X = np.column_stack([np.ones(20), rng.standard_normal(20) * 3])
    probabilities = mvcat_likelihood.conditional_and_marginal_probabilities(beta, X, layout)
    product = probabilities.marginal_1[:, :, None] * probabilities.marginal_2[:, None, :]
    joint = probabilities.cond_2_given_1 * probabilities.marginal_1[:, :, None]
    assert np.max(np.abs(joint - product)) < 1e-8


def test_penalty_and_objective(make_data):
    data, beta = make_data(10, 3)
    design = build_design(data.layout)
    rows = beta[1:]
    expected = 0.5 * np.linalg.norm(rows @ design.D, axis=1).sum() + 2.0 * np.linalg.norm(rows, axis=1).sum()
    assert mvcat_likelihood.penalty_value(beta, design, 0.5, 2.0) == pytest.approx(expected)
    assert mvcat_likelihood.penalty_value(beta, design, 0.5, 2.0, "lasso") == pytest.approx(2.0 * np.abs(rows).sum())
    assert mvcat_likelihood.objective(beta, data, design, 0.5, 2.0) == pytest.approx(
        mvcat_likelihood.nll(beta, data) + expected
    )
    with pytest.raises(DomainError):
        mvcat_likelihood.penalty_value(beta, design, 0.5, 2.0, "ridge")


def test_majorization_holds_for_small_steps(make_data, rng):
    """G(beta) <= G(Gamma) + <grad G(Gamma), beta - Gamma> + ||beta - Gamma||^2 / (2 s) for s <= 1 / L."""
    data, _ = make_data(30, 4)
    # L <= ||X||_2^2 / (2 n) for the multinomial loss; a step of n / ||X||_2^2 is safe
    step = data.n / np.linalg.norm(data.X, 2) ** 2
    for _ in range(10):
        Gamma = rng.standard_normal((4, 6))
        beta = Gamma + 0.5 * rng.standard_normal((4, 6))
        bound = (
            mvcat_likelihood.nll(Gamma, data)
            + np.sum(mvcat_likelihood.gradient(Gamma, data) * (beta - Gamma))
            + np.sum((beta - Gamma) ** 2) / (2 * step)
        )
        assert mvcat_likelihood.nll(beta, data) <= bound + 1e-12
