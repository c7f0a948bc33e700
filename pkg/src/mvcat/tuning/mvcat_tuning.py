"""
Prediction, evaluation metrics and tuning parameter selection.

Joint predictions are the most probable joint class; marginal predictions are the most probable category of the
summed marginal distribution, which need not agree with the corresponding component of the joint prediction.
Ties go to the lowest index. Selection minimizes the validation (or cross-validated) misclassification rate over a
(gamma, lambda) grid and breaks ties toward larger gamma, then larger lambda.

Environment variables:
    MVCAT_N_GAMMA: Default number of gamma values. Defaults to 25.
    MVCAT_N_LAMBDA: Default number of lambda multipliers. Defaults to 15.
    MVCAT_THREADS: Default number of worker threads for cross-validation. Defaults to 1.

Classes:
    TuningGrid: Gamma values and lambda values (or lambda / gamma multipliers).
    MetricReport: Evaluation metrics of one model on one dataset.
    Selection: Result of select_by_validation.
    CrossValidation: Result of cross_validate.

Functions:
    predict_probabilities(beta, X_new, standardization) -> np.ndarray
    predict_joint(beta, X_new, standardization) -> np.ndarray
    predict_marginal(beta, X_new, response, standardization) -> np.ndarray
    kl_divergence(pi_true, pi_est) -> float
    joint_misclassification(beta, data) -> float
    marginal_misclassification(beta, data, response) -> float
    deviance(beta, data) -> float
    metric_report(beta, data, true_probabilities) -> MetricReport
    default_grid(data, design, n_gamma, n_lambda, kind, penalty) -> TuningGrid
    assign_folds(n, k, seed, row_keys) -> np.ndarray
    select_by_validation(train, valid, design, grid, config, criterion) -> Selection
    cross_validate(data, design, grid, k, seed, config, threads, row_keys) -> CrossValidation
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np
from dotenv import load_dotenv
from scipy.special import rel_entr
from typing_extensions import TypedDict

from mvcat.design.mvcat_design import (
    PARTITION_TOL,
    CoefficientMatrix,
    OddsDesign,
    build_design,
    classify_predictors,
    marginal_probabilities,
)
from mvcat.error.mvcat_error import DomainError
from mvcat.likelihood.mvcat_likelihood import (
    PROBABILITY_FLOOR,
    Dataset,
    ObjectiveKind,
    PenaltyKind,
    Standardization,
    joint_probabilities,
    row_log_likelihood,
)
from mvcat.log.mvcat_logger import logger
from mvcat.number.mvcat_random import make_rng
from mvcat.solver.mvcat_solver import FitConfig, FitResult, PathResult, fit_path, gamma_max

load_dotenv()

#######################
# Constants definitions
#######################

DEFAULT_N_GAMMA = int(os.getenv("MVCAT_N_GAMMA", "25"))
DEFAULT_N_LAMBDA = int(os.getenv("MVCAT_N_LAMBDA", "15"))
DEFAULT_THREADS = int(os.getenv("MVCAT_THREADS", "1"))

# Smallest gamma of the default grid, relative to gamma_max
GAMMA_RATIO = 1e-4
# Range of lambda / gamma in the default grid
LAMBDA_MULTIPLIERS = (1e-3, 1e3)

Criterion = Literal["joint", "marginal"]


#############
# Type hints
#############


class MetricReport(TypedDict):
    """Evaluation metrics of one model on one dataset"""

    joint_misclassification: float
    marginal_misclassification: list[float]
    deviance: float
    kl_divergence: float | None
    n_selected: int
    n_evaluated: int


#####################
# Classes definitions
#####################


@dataclass(frozen=True)
class TuningGrid:
    """
    A (gamma, lambda) grid.

    Args:
        gammas (tuple[float, ...]): Gamma values.
        lambdas (tuple[float, ...]): Lambda values, or lambda / gamma multipliers when relative_lambda is True.
        relative_lambda (bool, optional): Defaults to True.

    Raises:
        DomainError: If a list is empty or holds a negative or non-finite value.
    """

    gammas: tuple[float, ...]
    lambdas: tuple[float, ...]
    relative_lambda: bool = True

    def __post_init__(self) -> None:
        for name in ("gammas", "lambdas"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise DomainError("Grid must not be empty", argument=name, value=values)
            if not all(math.isfinite(v) and v >= 0 for v in values):
                raise DomainError("Grid values must be finite and nonnegative", argument=name, value=values)
            object.__setattr__(self, name, values)

    @property
    def size(self) -> int:
        return len(set(self.gammas)) * len(set(self.lambdas))


class Selection(NamedTuple):
    """Selected tuning parameters, the fit at them and its validation error."""

    lam: float
    gamma: float
    fit: FitResult
    error: float


class CrossValidation(NamedTuple):
    """
    Cross-validation outcome.

    lam and gamma are the selected values, fold_reports holds the metrics of every fold at the selection, and
    grid_errors lists the pooled validation error of every grid point in path order.
    """

    lam: float
    gamma: float
    fold_reports: list[MetricReport]
    grid_errors: list[dict[str, float]]
    folds: np.ndarray


######################
# Function definitions
######################


def _design_matrix(beta: CoefficientMatrix, X_new: np.ndarray, standardization: Standardization | None) -> np.ndarray:
    if standardization is not None:
        X = standardization.apply(X_new)
    else:
        X = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X.shape[1] != beta.n_predictors:
        raise DomainError(
            f"X has {X.shape[1]} columns but the model has {beta.n_predictors} coefficient rows",
            argument="X_new",
            value=X.shape,
        )
    return X


def predict_probabilities(
    beta: CoefficientMatrix, X_new: np.ndarray, standardization: Standardization | None = None
) -> np.ndarray:
    """
    Joint class probabilities of new observations.

    Args:
        beta (CoefficientMatrix): Coefficients.
        X_new (np.ndarray): Raw predictors when a standardization is given, otherwise the full design matrix with
            its intercept column.
        standardization (Standardization, optional): The training record. Defaults to None.

    Raises:
        DomainError: If the number of columns does not match the model.

    Returns:
        np.ndarray: n x T probabilities.
    """
    return joint_probabilities(beta, _design_matrix(beta, X_new, standardization))


def predict_joint(
    beta: CoefficientMatrix, X_new: np.ndarray, standardization: Standardization | None = None
) -> np.ndarray:
    """Most probable 1-based joint class of every row, lowest class on ties."""
    return np.argmax(predict_probabilities(beta, X_new, standardization), axis=1) + 1


def predict_marginal(
    beta: CoefficientMatrix, X_new: np.ndarray, response: int, standardization: Standardization | None = None
) -> np.ndarray:
    """
    Most probable 1-based category of one response under the summed marginal, lowest category on ties.

    Raises:
        DomainError: If the response index is out of range or the columns do not match.
    """

    if not 1 <= int(response) <= beta.layout.n_responses:
        raise DomainError(
            f"Response index must be in 1..{beta.layout.n_responses}", argument="response", value=response
        )
    P = predict_probabilities(beta, X_new, standardization)
    return np.argmax(marginal_probabilities(beta.layout, P, response), axis=1) + 1


def kl_divergence(pi_true: np.ndarray, pi_est: np.ndarray) -> float:
    """
    Mean over rows of sum_c pi_true log(pi_true / pi_est), with pi_est floored at 1e-300.

    Raises:
        DomainError: If the shapes differ.

    Examples:
        >>> round(kl_divergence(np.array([[0.5, 0.5]]), np.array([[0.25, 0.75]])), 5)
        0.14384
    """

    pi_true = np.atleast_2d(np.asarray(pi_true, dtype=float))
    pi_est = np.atleast_2d(np.asarray(pi_est, dtype=float))
    if pi_true.shape != pi_est.shape:
        raise DomainError("Probability matrices must have the same shape", argument="pi_est", value=pi_est.shape)
    per_row = rel_entr(pi_true, np.maximum(pi_est, PROBABILITY_FLOOR)).sum(axis=1)
    return max(float(per_row.mean()), 0.0)


def _joint_errors(beta: CoefficientMatrix, data: Dataset) -> tuple[int, int]:
    complete = data.complete_rows
    if not complete.any():
        return 0, 0
    truth = np.argmax(data.Y[complete], axis=1) + 1
    predicted = predict_joint(beta, data.X[complete])
    return int(np.sum(predicted != truth)), int(complete.sum())


def _marginal_errors(beta: CoefficientMatrix, data: Dataset, response: int) -> tuple[int, int]:
    seen = data.observed[:, response - 1]
    if not seen.any():
        return 0, 0
    predicted = predict_marginal(beta, data.X[seen], response)
    return int(np.sum(predicted != data.categories[seen, response - 1])), int(seen.sum())


def _rate(errors: int, count: int) -> float:
    return errors / count if count else math.nan


def joint_misclassification(beta: CoefficientMatrix, data: Dataset) -> float:
    """Share of fully observed rows whose joint class is mispredicted (nan if there are none)."""
    return _rate(*_joint_errors(beta, data))


def marginal_misclassification(beta: CoefficientMatrix, data: Dataset, response: int) -> float:
    """Share of rows observing the response whose category is mispredicted (nan if there are none)."""
    return _rate(*_marginal_errors(beta, data, response))


def deviance(beta: CoefficientMatrix, data: Dataset) -> float:
    """-2 times the observed-data log-likelihood summed over rows."""
    return float(-2.0 * row_log_likelihood(beta, data).sum())


def metric_report(
    beta: CoefficientMatrix, data: Dataset, true_probabilities: np.ndarray | None = None
) -> MetricReport:
    """
    Evaluate a model on a dataset.

    Args:
        beta (CoefficientMatrix): Coefficients.
        data (Dataset): Evaluation data, standardized with the training record.
        true_probabilities (np.ndarray, optional): n x T true probabilities, known in simulations. Defaults to None.

    Returns:
        MetricReport: The metrics. n_selected counts predictors with a nonzero coefficient row.
    """

    kl = None
    if true_probabilities is not None:
        kl = kl_divergence(true_probabilities, joint_probabilities(beta, data.X))
    partition = classify_predictors(build_design(beta.layout), beta, PARTITION_TOL)
    return {
        "joint_misclassification": joint_misclassification(beta, data),
        "marginal_misclassification": [
            marginal_misclassification(beta, data, response) for response in range(1, beta.layout.n_responses + 1)
        ],
        "deviance": deviance(beta, data),
        "kl_divergence": kl,
        "n_selected": len(partition.selected),
        "n_evaluated": data.n,
    }


def default_grid(
    data: Dataset,
    design: OddsDesign,
    n_gamma: int = DEFAULT_N_GAMMA,
    n_lambda: int = DEFAULT_N_LAMBDA,
    kind: ObjectiveKind = "full",
    penalty: PenaltyKind = "log_odds",
) -> TuningGrid:
    """
    Log-spaced grid anchored at gamma_max.

    Gamma runs over n_gamma points from gamma_max down to 1e-4 gamma_max; lambda is relative to gamma, over n_lambda
    points spanning [1e-3, 1e3].

    Raises:
        DomainError: If a count is less than 1.
    """

    if n_gamma < 1 or n_lambda < 1:
        raise DomainError("Grid sizes must be positive", argument="n_gamma, n_lambda", value=(n_gamma, n_lambda))
    top = gamma_max(data, design, kind, penalty)
    gammas = np.geomspace(top, GAMMA_RATIO * top, n_gamma) if n_gamma > 1 else np.array([top])
    lambdas = np.geomspace(*LAMBDA_MULTIPLIERS, n_lambda) if n_lambda > 1 else np.array([1.0])
    return TuningGrid(tuple(gammas), tuple(lambdas), relative_lambda=True)


def assign_folds(n: int, k: int, seed: int, row_keys: list | np.ndarray | None = None) -> np.ndarray:
    """
    Seeded fold labels 0..k-1 by a shuffled modulo split.

    Positions are shuffled with a generator seeded by seed and the i-th shuffled position goes to fold i mod k, so
    fold sizes differ by at most one. With row_keys, positions refer to the rows sorted by key, which makes a row's
    fold independent of the input row order.

    Args:
        n (int): Number of rows.
        k (int): Number of folds.
        seed (int): Seed.
        row_keys (list, optional): One distinct sortable key per row. Defaults to None.

    Raises:
        DomainError: If k < 2, n < k, or the keys do not match n.

    Returns:
        np.ndarray: Fold label of every row.
    """

    if k < 2:
        raise DomainError("At least two folds are needed", argument="k", value=k)
    if n < k:
        raise DomainError(f"Cannot split {n} rows into {k} folds", argument="k", value=k)
    permutation = make_rng(seed).permutation(n)
    canonical = np.empty(n, dtype=np.int64)
    canonical[permutation] = np.arange(n) % k
    if row_keys is None:
        return canonical
    keys = np.asarray(row_keys)
    if keys.shape[0] != n:
        raise DomainError("One key per row is required", argument="row_keys", value=keys.shape[0])
    order = np.argsort(keys, kind="stable")
    folds = np.empty(n, dtype=np.int64)
    folds[order] = canonical
    return folds


def _path(train: Dataset, design: OddsDesign, grid: TuningGrid, config: FitConfig) -> PathResult:
    return fit_path(train, design, grid.lambdas, grid.gammas, config, relative_lambda=grid.relative_lambda)


def _errors(beta: CoefficientMatrix, data: Dataset, criterion: Criterion) -> tuple[int, int]:
    if criterion == "joint":
        return _joint_errors(beta, data)
    if criterion == "marginal":
        counts = [_marginal_errors(beta, data, r) for r in range(1, beta.layout.n_responses + 1)]
        return sum(e for e, _ in counts), sum(c for _, c in counts)
    raise DomainError("Criterion must be 'joint' or 'marginal'", argument="criterion", value=criterion)


def _best(errors: list[float]) -> int:
    # path order is gamma descending then lambda descending, so the first minimum is the sparsest tie
    rates = np.nan_to_num(np.asarray(errors, dtype=float), nan=np.inf)
    return int(np.argmin(rates))


def select_by_validation(
    train: Dataset,
    valid: Dataset,
    design: OddsDesign,
    grid: TuningGrid,
    config: FitConfig,
    criterion: Criterion = "joint",
) -> Selection:
    """
    Fit the grid on train and keep the fit with the lowest validation misclassification.

    valid is re-standardized with the training record before evaluation. "joint" minimizes the joint
    misclassification rate; "marginal" minimizes the sum of the marginal rates (used for the separate-models
    baseline). Ties go to larger gamma, then larger lambda.

    Args:
        train (Dataset): Training data.
        valid (Dataset): Validation data.
        design (OddsDesign): Design.
        grid (TuningGrid): The grid.
        config (FitConfig): Solver settings.
        criterion (str, optional): "joint" or "marginal". Defaults to "joint".

    Returns:
        Selection: The selected fit.
    """

    valid = valid.standardized_with(train.standardization)
    path = _path(train, design, grid, config)
    fits = list(path)
    errors = [_rate(*_errors(result.beta, valid, criterion)) for result in fits]
    best = _best(errors)
    chosen = fits[best]
    logger.info(
        f"Selected lambda={chosen.lam:.4g}, gamma={chosen.gamma:.4g} with validation {criterion} error "
        f"{errors[best]:.4f} over {len(fits)} grid points"
    )
    return Selection(lam=chosen.lam, gamma=chosen.gamma, fit=chosen, error=errors[best])


def _warn_missing_levels(train: Dataset, fold: int) -> None:
    for response, k in enumerate(train.layout.cardinalities):
        seen = set(np.unique(train.categories[:, response]).tolist()) - {0}
        if len(seen) < k:
            logger.warning(
                f"Training folds for fold {fold + 1} miss categories {sorted(set(range(1, k + 1)) - seen)} "
                f"of response {response + 1}"
            )


def cross_validate(
    data: Dataset,
    design: OddsDesign,
    grid: TuningGrid,
    k: int = 5,
    seed: int = 0,
    config: FitConfig | None = None,
    threads: int = DEFAULT_THREADS,
    row_keys: list | np.ndarray | None = None,
    criterion: Criterion = "joint",
) -> CrossValidation:
    """
    k-fold cross-validation over a grid.

    Each fold fits the whole path on the other folds, standardized on those folds only, and counts errors on the
    held-out fold. Errors are pooled over folds before the minimum is taken. Folds run on up to threads worker
    threads; the outcome does not depend on the thread count.

    Args:
        data (Dataset): All data.
        design (OddsDesign): Design.
        grid (TuningGrid): The grid, shared by every fold.
        k (int, optional): Number of folds; k = n is leave-one-out. Defaults to 5.
        seed (int, optional): Fold seed. Defaults to 0.
        config (FitConfig, optional): Solver settings. Defaults to FitConfig().
        threads (int, optional): Worker threads. Defaults to MVCAT_THREADS.
        row_keys (list, optional): Canonical row keys for assign_folds. Defaults to None.
        criterion (str, optional): "joint" or "marginal". Defaults to "joint".

    Raises:
        DomainError: If k < 2 or n < k.

    Returns:
        CrossValidation: Selection, per-fold metrics at the selection, pooled errors per grid point and the folds.
    """

    config = config if config is not None else FitConfig()
    folds = assign_folds(data.n, k, seed, row_keys)

    def run_fold(fold: int) -> tuple[list[FitResult], Dataset]:
        held_out = folds == fold
        train = data.subset(~held_out, restandardize=True)
        _warn_missing_levels(train, fold)
        valid = data.subset(held_out).standardized_with(train.standardization)
        return list(_path(train, design, grid, config)), valid

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        outcomes = list(executor.map(run_fold, range(k)))

    n_points = len(outcomes[0][0])
    wrong, counted = np.zeros(n_points, dtype=np.int64), np.zeros(n_points, dtype=np.int64)
    for fits, valid in outcomes:
        for point, result in enumerate(fits):
            e, c = _errors(result.beta, valid, criterion)
            wrong[point] += e
            counted[point] += c
    errors = [_rate(int(e), int(c)) for e, c in zip(wrong, counted)]
    best = _best(errors)

    reference = outcomes[0][0]
    grid_errors = [
        {"lambda": fit_.lam, "gamma": fit_.gamma, "error": error, "n_evaluated": int(c)}
        for fit_, error, c in zip(reference, errors, counted)
    ]
    fold_reports = [metric_report(fits[best].beta, valid) for fits, valid in outcomes]
    lam, gamma = reference[best].lam, reference[best].gamma
    logger.info(f"{k}-fold cross-validation selected lambda={lam:.4g}, gamma={gamma:.4g} (error {errors[best]:.4f})")
    return CrossValidation(lam=lam, gamma=gamma, fold_reports=fold_reports, grid_errors=grid_errors, folds=folds)
