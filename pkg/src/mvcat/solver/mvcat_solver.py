"""
Penalized maximum likelihood by accelerated proximal gradient descent.

The estimator minimizes loss(beta) + lam * sum_m ||D'beta_m|| + gamma * sum_m ||beta_m|| over rows m = 2..p, where
the loss is the full or the observed-data negative log-likelihood. Each iteration extrapolates from the last two
iterates, takes a gradient step from the extrapolated point, leaves the intercept row unpenalized, applies the
closed-form prox to every other row and accepts the step once the quadratic majorization test holds, halving the
step (by backtrack_factor) until it does. The step is reset to initial_step at the next iteration.

Environment variables:
    MVCAT_MAX_ITERATIONS: Default iteration cap. Defaults to 5000.
    MVCAT_TOL: Default relative objective change for convergence. Defaults to 1e-8.
    MVCAT_INITIAL_STEP: Default initial step size. Defaults to 1.0.
    MVCAT_BACKTRACK_FACTOR: Default step shrink factor. Defaults to 0.5.

Classes:
    FitConfig: Penalties and solver settings.
    FitResult: A fitted model and its diagnostics.
    PathResult: Fits over a (gamma, lambda) grid.

Functions:
    fit(data, design, config, warm_start) -> FitResult
    fit_path(data, design, lambda_grid, gamma_grid, config, relative_lambda) -> PathResult
    kkt_residual(beta, data, design, lam, gamma, kind, penalty) -> float
    gamma_max(data, design, kind, penalty) -> float
    theory_gamma(n, p, layout, alpha, scale) -> float
"""

import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np
from dotenv import load_dotenv

from mvcat.design.mvcat_design import (
    PARTITION_TOL,
    CategoryLayout,
    CoefficientMatrix,
    OddsDesign,
    PredictorPartition,
    classify_predictors,
    coefficient_values,
)
from mvcat.error.mvcat_error import ContractViolationError, DomainError, NumericError
from mvcat.likelihood.mvcat_likelihood import (
    Dataset,
    ObjectiveKind,
    PenaltyKind,
    loss,
    loss_gradient,
    penalty_value,
)
from mvcat.log.mvcat_logger import logger
from mvcat.prox.mvcat_prox import prox_rows, soft_threshold

load_dotenv()

#######################
# Constants definitions
#######################

DEFAULT_MAX_ITERATIONS = int(os.getenv("MVCAT_MAX_ITERATIONS", "5000"))
DEFAULT_TOL = float(os.getenv("MVCAT_TOL", "1e-8"))
DEFAULT_INITIAL_STEP = float(os.getenv("MVCAT_INITIAL_STEP", "1.0"))
DEFAULT_BACKTRACK_FACTOR = float(os.getenv("MVCAT_BACKTRACK_FACTOR", "0.5"))

# Rounding allowance of the majorization test, relative to 1 + |loss|
MAJORIZATION_SLACK = 16 * np.finfo(float).eps

# The step may shrink to this fraction of initial_step before the fit gives up
_MIN_STEP_RATIO = 1e-20

# Tolerance on ||D'beta_m|| below which kkt_residual treats the log odds part as nondifferentiable
_KKT_ZERO_TOL = 1e-8

_OBJECTIVE_KINDS = ("full", "observed")
_PENALTIES = ("log_odds", "lasso")


#####################
# Classes definitions
#####################


@dataclass(frozen=True)
class FitConfig:
    """
    Penalties and solver settings.

    Args:
        lam (float, optional): Weight of the log odds ratio penalty. Defaults to 0.
        gamma (float, optional): Weight of the group (or entrywise for "lasso") penalty. Defaults to 0.
        initial_step (float, optional): Step size tried first at every iteration. Defaults to MVCAT_INITIAL_STEP.
        backtrack_factor (float, optional): Step shrink factor in (0, 1). Defaults to MVCAT_BACKTRACK_FACTOR.
        max_iterations (int, optional): Iteration cap. Defaults to MVCAT_MAX_ITERATIONS.
        tol (float, optional): Stop when |F_t - F_{t-1}| / (1 + |F_{t-1}|) < tol. Defaults to MVCAT_TOL.
        objective_kind (str, optional): "full" or "observed" (semi-supervised). Defaults to "full".
        accelerate (bool, optional): Use momentum. Without it the objective never increases. Defaults to True.
        penalty (str, optional): "log_odds" or "lasso" (entrywise l1 with weight gamma). Defaults to "log_odds".

    Raises:
        DomainError: If a value is out of range.
    """

    lam: float = 0.0
    gamma: float = 0.0
    initial_step: float = DEFAULT_INITIAL_STEP
    backtrack_factor: float = DEFAULT_BACKTRACK_FACTOR
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    tol: float = DEFAULT_TOL
    objective_kind: ObjectiveKind = "full"
    accelerate: bool = True
    penalty: PenaltyKind = "log_odds"

    def __post_init__(self) -> None:
        for name in ("lam", "gamma"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise DomainError("Penalty weights must be finite and nonnegative", argument=name, value=value)
        if not self.initial_step > 0:
            raise DomainError("Initial step must be positive", argument="initial_step", value=self.initial_step)
        if not 0 < self.backtrack_factor < 1:
            raise DomainError(
                "Backtrack factor must be in (0, 1)", argument="backtrack_factor", value=self.backtrack_factor
            )
        if self.max_iterations < 1:
            raise DomainError("At least one iteration is needed", argument="max_iterations", value=self.max_iterations)
        if not self.tol > 0:
            raise DomainError("Tolerance must be positive", argument="tol", value=self.tol)
        if self.objective_kind not in _OBJECTIVE_KINDS:
            raise DomainError("Unknown objective kind", argument="objective_kind", value=self.objective_kind)
        if self.penalty not in _PENALTIES:
            raise DomainError("Unknown penalty", argument="penalty", value=self.penalty)

    def with_penalties(self, lam: float, gamma: float) -> "FitConfig":
        return replace(self, lam=float(lam), gamma=float(gamma))


@dataclass(frozen=True, eq=False)
class FitResult:
    """
    A fitted model.

    Attributes:
        beta (CoefficientMatrix): Coefficients, intercept row centered.
        objective_trace (tuple[float, ...]): Penalized objective at the starting point and after every iteration.
        iterations (int): Iterations run.
        converged (bool): Whether the tolerance was met before max_iterations.
        partition (PredictorPartition): classify_predictors of beta at tolerance 1e-8.
        final_step (float): Step size accepted at the last iteration.
        lam (float): Log odds penalty weight used.
        gamma (float): Group penalty weight used.
    """

    beta: CoefficientMatrix
    objective_trace: tuple[float, ...]
    iterations: int
    converged: bool
    partition: PredictorPartition
    final_step: float
    lam: float
    gamma: float

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


@dataclass(frozen=True, eq=False)
class PathResult:
    """
    Fits over a grid, in the order they were computed.

    Attributes:
        gammas (tuple[float, ...]): Gamma values, decreasing.
        lambdas (tuple[tuple[float, ...], ...]): For each gamma, the absolute lambda values, decreasing.
        fits (tuple[tuple[FitResult, ...], ...]): fits[g][l] was fitted at (lambdas[g][l], gammas[g]).
    """

    gammas: tuple[float, ...]
    lambdas: tuple[tuple[float, ...], ...]
    fits: tuple[tuple[FitResult, ...], ...] = field(repr=False)

    def __iter__(self) -> Iterator[FitResult]:
        for row in self.fits:
            yield from row

    def __len__(self) -> int:
        return sum(len(row) for row in self.fits)


######################
# Function definitions
######################


def _proximal_step(U: np.ndarray, step: float, design: OddsDesign, config: FitConfig) -> np.ndarray:
    beta = np.empty_like(U)
    beta[0] = U[0]
    if config.penalty == "lasso":
        beta[1:] = soft_threshold(U[1:], step * config.gamma)
    else:
        beta[1:] = prox_rows(design, U[1:], step * config.lam, step * config.gamma)
    return beta


def _check_layouts(data: Dataset, design: OddsDesign) -> None:
    if data.layout != design.layout:
        raise DomainError(
            f"Dataset layout {data.layout} does not match design layout {design.layout}",
            argument="design",
            value=str(design.layout),
        )


def fit(
    data: Dataset,
    design: OddsDesign,
    config: FitConfig,
    warm_start: CoefficientMatrix | np.ndarray | None = None,
) -> FitResult:
    """
    Fit the penalized model.

    Args:
        data (Dataset): Training data.
        design (OddsDesign): Design matching the data layout.
        config (FitConfig): Penalties and solver settings.
        warm_start (CoefficientMatrix | np.ndarray, optional): Starting coefficients. Defaults to zero.

    Raises:
        DomainError: If the layouts or the warm start shape disagree.
        ContractViolationError: If objective_kind is "full" and some response is missing.
        NumericError: If the objective becomes non-finite or the step size underflows.

    Returns:
        FitResult: The fit. A fit that hit max_iterations is returned with converged=False.
    """

    _check_layouts(data, design)
    if config.objective_kind == "full" and not data.fully_observed:
        raise ContractViolationError(
            "Data has missing responses; fit with objective_kind='observed' or drop the incomplete rows"
        )

    shape = (data.p, design.layout.total_classes)
    if warm_start is None:
        beta = np.zeros(shape)
    else:
        beta = np.array(coefficient_values(warm_start), dtype=float)
        if beta.shape != shape:
            raise DomainError(f"Warm start must have shape {shape}", argument="warm_start", value=beta.shape)

    kind = config.objective_kind
    penalty = config.penalty
    beta_previous = beta.copy()
    alpha_previous = alpha = 1.0
    current_loss = loss(beta, data, kind)
    current = current_loss + penalty_value(beta, design, config.lam, config.gamma, penalty)
    trace = [current]
    converged = False
    step = config.initial_step
    iteration = 0

    for iteration in range(1, config.max_iterations + 1):
        momentum = (alpha_previous - 1.0) / alpha if config.accelerate else 0.0
        gamma_point = beta + momentum * (beta - beta_previous)
        loss_at_point = loss(gamma_point, data, kind)
        grad = loss_gradient(gamma_point, data, kind)

        step = config.initial_step
        while True:
            candidate = _proximal_step(gamma_point - step * grad, step, design, config)
            difference = candidate - gamma_point
            candidate_loss = loss(candidate, data, kind)
            bound = loss_at_point + np.sum(grad * difference) + np.sum(difference**2) / (2.0 * step)
            if candidate_loss <= bound + MAJORIZATION_SLACK * (1.0 + abs(loss_at_point)):
                break
            step *= config.backtrack_factor
            if step < _MIN_STEP_RATIO * config.initial_step:
                raise NumericError("Step size underflow in backtracking", iteration=iteration)

        beta_previous, beta = beta, candidate
        alpha_previous, alpha = alpha, (1.0 + math.sqrt(1.0 + 4.0 * alpha**2)) / 2.0

        value = candidate_loss + penalty_value(beta, design, config.lam, config.gamma, penalty)
        if not math.isfinite(value):
            raise NumericError(
                "Non-finite objective",
                iteration=iteration,
                detail=f"max |beta| = {np.max(np.abs(beta)):.6g}, step = {step:.3g}",
            )
        trace.append(value)
        change = abs(value - current) / (1.0 + abs(current))
        current = value
        if iteration % 500 == 0:
            logger.debug(f"Iteration {iteration}: objective {value:.10g}, relative change {change:.3e}")
        if change < config.tol:
            converged = True
            break

    if not converged:
        logger.warning(
            f"Fit at lambda={config.lam:.4g}, gamma={config.gamma:.4g} did not converge in {iteration} iterations"
        )

    fitted = CoefficientMatrix(beta, design.layout).recentered()
    return FitResult(
        beta=fitted,
        objective_trace=tuple(trace),
        iterations=iteration,
        converged=converged,
        partition=classify_predictors(design, fitted, PARTITION_TOL),
        final_step=step,
        lam=config.lam,
        gamma=config.gamma,
    )


def _validated_grid(values: list[float] | tuple[float, ...] | np.ndarray, name: str) -> tuple[float, ...]:
    grid = [float(v) for v in np.atleast_1d(values)]
    if not grid:
        raise DomainError("Grid must not be empty", argument=name, value=grid)
    for v in grid:
        if not (math.isfinite(v) and v >= 0):
            raise DomainError("Grid values must be finite and nonnegative", argument=name, value=v)
    return tuple(sorted(set(grid), reverse=True))


def fit_path(
    data: Dataset,
    design: OddsDesign,
    lambda_grid: list[float] | np.ndarray,
    gamma_grid: list[float] | np.ndarray,
    config: FitConfig,
    relative_lambda: bool = False,
) -> PathResult:
    """
    Fit every (lambda, gamma) pair of a grid with warm starts.

    Gamma goes from largest to smallest in the outer loop and lambda from largest to smallest in the inner loop.
    Each fit starts from the previous one; the first lambda of a new gamma starts from the first-lambda fit of the
    previous gamma. The path is sequential, so results do not depend on how callers parallelize across paths.

    Args:
        data (Dataset): Training data.
        design (OddsDesign): Design.
        lambda_grid (list[float]): Lambda values, or multipliers of gamma when relative_lambda is True.
        gamma_grid (list[float]): Gamma values.
        config (FitConfig): Solver settings; its lam and gamma are ignored.
        relative_lambda (bool, optional): Interpret lambda_grid as lambda / gamma. Defaults to False.

    Raises:
        DomainError: If a grid is empty or has a negative or non-finite value.

    Returns:
        PathResult: The fits.
    """

    lambda_values = _validated_grid(lambda_grid, "lambda_grid")
    gammas = _validated_grid(gamma_grid, "gamma_grid")

    all_lambdas, all_fits = [], []
    anchor: CoefficientMatrix | None = None
    for gamma in gammas:
        lambdas = tuple(sorted({m * gamma if relative_lambda else m for m in lambda_values}, reverse=True))
        fits: list[FitResult] = []
        warm = anchor
        for lam in lambdas:
            result = fit(data, design, config.with_penalties(lam, gamma), warm_start=warm)
            logger.debug(
                f"Path point lambda={lam:.4g}, gamma={gamma:.4g}: {result.iterations} iterations, "
                f"{len(result.partition.selected)} predictors selected"
            )
            fits.append(result)
            warm = result.beta
        anchor = fits[0].beta
        all_lambdas.append(lambdas)
        all_fits.append(tuple(fits))

    return PathResult(gammas=gammas, lambdas=tuple(all_lambdas), fits=tuple(all_fits))


def kkt_residual(
    beta: CoefficientMatrix | np.ndarray,
    data: Dataset,
    design: OddsDesign,
    lam: float,
    gamma: float,
    kind: ObjectiveKind = "full",
    penalty: PenaltyKind = "log_odds",
) -> float:
    """
    Distance of beta from stationarity.

    For the intercept row this is the norm of the gradient row. For a penalized row it is the distance from
    -gradient_m to the subdifferential of lam ||D'.|| + gamma ||.|| at beta_m. Where a norm is not differentiable
    its subdifferential is a scaled unit ball, and the distance is the norm of a prox (Moreau decomposition):
    ||prox(-g)|| for a zero row, and ||prox_{lam ||D'.||}(-g - gamma beta_m / ||beta_m||)|| when only D'beta_m is 0.

    Args:
        beta (CoefficientMatrix | np.ndarray): Coefficients.
        data (Dataset): Data.
        design (OddsDesign): Design.
        lam (float): Log odds penalty weight.
        gamma (float): Group (or entrywise) penalty weight.
        kind (str, optional): "full" or "observed". Defaults to "full".
        penalty (str, optional): "log_odds" or "lasso". Defaults to "log_odds".

    Returns:
        float: The largest row residual.
    """

    B = coefficient_values(beta)
    g = loss_gradient(B, data, kind)
    residuals = [float(np.linalg.norm(g[0]))]
    rows, grads = B[1:], g[1:]
    if rows.shape[0] == 0:
        return residuals[0]

    if penalty == "lasso":
        nonzero = rows != 0
        entry = np.where(nonzero, np.abs(grads + gamma * np.sign(rows)), np.maximum(np.abs(grads) - gamma, 0.0))
        return max(residuals[0], float(entry.max()))

    row_norms = np.linalg.norm(rows, axis=1)
    odds = rows @ design.D
    odds_norms = np.linalg.norm(odds, axis=1)

    zero = row_norms == 0
    flat = ~zero & (odds_norms <= _KKT_ZERO_TOL)
    smooth = ~zero & ~flat

    if zero.any():
        residuals.extend(np.linalg.norm(prox_rows(design, -grads[zero], lam, gamma), axis=1))
    if flat.any():
        shifted = -grads[flat] - gamma * rows[flat] / row_norms[flat, None]
        residuals.extend(np.linalg.norm(prox_rows(design, shifted, lam, 0.0), axis=1))
    if smooth.any():
        subgradient = (
            grads[smooth]
            + lam * (odds[smooth] / odds_norms[smooth, None]) @ design.D.T
            + gamma * rows[smooth] / row_norms[smooth, None]
        )
        residuals.extend(np.linalg.norm(subgradient, axis=1))
    return float(max(residuals))


def gamma_max(
    data: Dataset, design: OddsDesign, kind: ObjectiveKind = "full", penalty: PenaltyKind = "log_odds"
) -> float:
    """
    Smallest gamma for which the all-zero fit (intercept aside) is optimal at lambda = 0.

    It is max_m ||g_m|| over rows 2..p (max |g_mc| for "lasso") of the loss gradient at the intercept-only
    maximum likelihood fit. For the full likelihood that fit gives every row the empirical class frequencies; for
    the observed-data likelihood it is computed with the solver.

    Raises:
        DomainError: If the dataset has no predictor besides the intercept.

    Returns:
        float: The anchor of the gamma grid.
    """

    _check_layouts(data, design)
    if data.p < 2:
        raise DomainError("gamma_max needs a predictor besides the intercept", argument="data", value=data.p)
    if kind == "full":
        if not data.fully_observed:
            raise ContractViolationError("Data has missing responses; use kind='observed'")
        frequencies = data.Y.mean(axis=0)
        g = data.X.T @ (frequencies[None, :] - data.Y) / data.n
    else:
        intercept_only = replace(data, X=data.X[:, :1], raw_predictors=data.raw_predictors[:, :0])
        result = fit(intercept_only, design, FitConfig(tol=1e-12, objective_kind=kind))
        beta = np.zeros((data.p, design.layout.total_classes))
        beta[0] = result.beta.values[0]
        g = loss_gradient(beta, data, kind)
    rows = g[1:]
    if penalty == "lasso":
        return float(np.abs(rows).max())
    return float(np.linalg.norm(rows, axis=1).max())


def theory_gamma(n: int, p: int, layout: CategoryLayout, alpha: float = 0.05, scale: float = 1.0) -> float:
    """
    Rate-based gamma, scale * (sqrt(T / (4n)) + sqrt(log(p / alpha) / n)), usable as a grid anchor.

    Raises:
        DomainError: If n or p is not positive or alpha is not in (0, 1).
    """

    if n < 1 or p < 1:
        raise DomainError("n and p must be positive", argument="n, p", value=(n, p))
    if not 0 < alpha < 1:
        raise DomainError("alpha must be in (0, 1)", argument="alpha", value=alpha)
    return scale * (math.sqrt(layout.total_classes / (4 * n)) + math.sqrt(math.log(p / alpha) / n))
