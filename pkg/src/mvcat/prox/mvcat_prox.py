"""
Proximal operator of eta -> lambda_bar * ||D'eta|| + gamma_bar * ||eta||.

The minimizer of 1/2 ||eta - nu||^2 + lambda_bar ||D'eta|| + gamma_bar ||eta|| has a closed form:

1. ||nu|| < gamma_bar: the result is 0.
2. ||(D'D)^- D'nu|| <= lambda_bar: shrink the projection of nu onto the null space of D'.
3. otherwise: shrink nu - D(D'D + tau I)^{-1} D'nu, where tau > 0 solves ||(D'D + tau I)^{-1} D'nu|| = lambda_bar.

"Shrink" is z -> max(1 - gamma_bar / ||z||, 0) z. Everything is expressed through the left singular vectors U and
squared singular values s2 of D cached on the OddsDesign: with w = U'nu, the case 2 test is
sum w^2 / s2 <= lambda_bar^2 and the case 3 equation is sum w^2 s2 / (s2 + tau)^2 = lambda_bar^2. When every s2 is
the same value c (all bivariate designs) that equation gives tau = sqrt(c sum w^2) / lambda_bar - c.

prox_rows applies the operator to many rows at once, which is what the solver does every iteration.

Classes:
    ProxInput: One prox problem.
    SelftestReport: Result of run_selftest.

Functions:
    prox_rows(design, V, lambda_bar, gamma_bar) -> np.ndarray
    prox_cases(design, V, lambda_bar, gamma_bar) -> np.ndarray
    prox_row(design, nu, lambda_bar, gamma_bar) -> np.ndarray
    solve_tau(design, nu, lambda_bar) -> float
    tau_residual(design, nu, lambda_bar, tau) -> float
    prox_2x2(nu, lambda_bar, gamma_bar) -> np.ndarray
    soft_threshold(V, threshold) -> np.ndarray
    numerical_prox_oracle(problem, iterations, tol) -> np.ndarray
    run_selftest(trials, seed, max_categories) -> SelftestReport
"""

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize
from typing_extensions import TypedDict

from mvcat.design.mvcat_design import OddsDesign, build_bivariate_design
from mvcat.error.mvcat_error import DomainError, OracleConvergenceError
from mvcat.log.mvcat_logger import logger
from mvcat.number.mvcat_random import make_rng

#######################
# Constants definitions
#######################

# Required accuracy of ||(D'D + tau I)^{-1} D'nu|| - lambda_bar
TAU_TOL = 1e-10

# Smoothing levels of the reference solver, relative to 1 + ||nu||
_ORACLE_LEVELS = (1.0, 1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12)
_ORACLE_FINAL_LEVEL = 1e-14

_CASE_SCREENED, _CASE_PROJECTED, _CASE_TAU = 1, 2, 3


#############
# Type hints
#############


class SelftestReport(TypedDict):
    """Summary of a prox self-test sweep"""

    trials: int
    seed: int
    max_oracle_deviation: float
    max_tau_residual: float
    max_2x2_deviation: float
    case_counts: dict[str, int]
    seconds: float


#####################
# Classes definitions
#####################


@dataclass(frozen=True, eq=False)
class ProxInput:
    """
    One prox problem.

    Args:
        design (OddsDesign): The design whose D enters the penalty.
        nu (np.ndarray): The point, length T.
        lambda_bar (float): Weight of ||D'eta||, nonnegative.
        gamma_bar (float): Weight of ||eta||, nonnegative.

    Raises:
        DomainError: If a weight is negative or nu has the wrong length.
    """

    design: OddsDesign
    nu: np.ndarray
    lambda_bar: float
    gamma_bar: float

    def __post_init__(self) -> None:
        nu = np.asarray(self.nu, dtype=float)
        T = self.design.layout.total_classes
        if nu.shape != (T,):
            raise DomainError(f"nu must have length {T}", argument="nu", value=nu.shape)
        if self.lambda_bar < 0:
            raise DomainError("lambda_bar must be nonnegative", argument="lambda_bar", value=self.lambda_bar)
        if self.gamma_bar < 0:
            raise DomainError("gamma_bar must be nonnegative", argument="gamma_bar", value=self.gamma_bar)
        object.__setattr__(self, "nu", nu)

    def objective(self, eta: np.ndarray) -> float:
        """1/2 ||eta - nu||^2 + lambda_bar ||D'eta|| + gamma_bar ||eta||."""
        eta = np.asarray(eta, dtype=float)
        return float(
            0.5 * np.sum((eta - self.nu) ** 2)
            + self.lambda_bar * np.linalg.norm(self.design.D.T @ eta)
            + self.gamma_bar * np.linalg.norm(eta)
        )


######################
# Function definitions
######################


def _shrink(Z: np.ndarray, gamma_bar: float) -> np.ndarray:
    norms = np.linalg.norm(Z, axis=1)
    factor = np.zeros_like(norms)
    positive = norms > 0
    factor[positive] = np.maximum(1.0 - gamma_bar / norms[positive], 0.0)
    return Z * factor[:, None]


def _tau_equation(w2: np.ndarray, s2: np.ndarray, lambda_bar: float):
    # strictly decreasing in tau
    return lambda tau: float(np.sum(w2 * s2 / (s2 + tau) ** 2) - lambda_bar**2)


def _residual(w2: np.ndarray, s2: np.ndarray, lambda_bar: float, tau: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(w2 * s2 / (s2 + np.atleast_1d(tau)[:, None]) ** 2, axis=1)) - lambda_bar


def _bracketed_tau(w2: np.ndarray, s2: np.ndarray, lambda_bar: float) -> float:
    equation = _tau_equation(w2, s2, lambda_bar)
    upper = np.sqrt(np.sum(w2) * s2.max()) / lambda_bar
    tau = scipy.optimize.brentq(equation, 0.0, upper, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    # Newton polish, kept inside the bracket
    for _ in range(3):
        slope = float(-2.0 * np.sum(w2 * s2 / (s2 + tau) ** 3))
        if slope == 0.0:
            break
        candidate = tau - equation(tau) / slope
        if not 0.0 <= candidate <= upper:
            break
        tau = candidate
    return float(tau)


def _solve_taus(W: np.ndarray, s2: np.ndarray, lambda_bar: float, equal_spectrum: bool) -> np.ndarray:
    """tau for every row of W = V U, assuming each row is in case 3."""
    w2 = W**2
    taus = np.full(W.shape[0], np.nan)
    if equal_spectrum:
        c = s2[0]
        taus = np.sqrt(c * w2.sum(axis=1)) / lambda_bar - c
    ok = np.isfinite(taus) & (taus >= 0)
    ok[ok] = np.abs(_residual(w2[ok], s2, lambda_bar, taus[ok])) <= TAU_TOL
    for row in np.flatnonzero(~ok):
        taus[row] = _bracketed_tau(w2[row], s2, lambda_bar)
    return taus


def _prox_with_cases(
    design: OddsDesign, V: np.ndarray, lambda_bar: float, gamma_bar: float
) -> tuple[np.ndarray, np.ndarray]:
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.shape[1] != design.layout.total_classes:
        raise DomainError(f"Rows must have length {design.layout.total_classes}", argument="V", value=V.shape)
    if lambda_bar < 0 or gamma_bar < 0:
        raise DomainError(
            "Penalty weights must be nonnegative", argument="lambda_bar, gamma_bar", value=(lambda_bar, gamma_bar)
        )

    cases = np.full(V.shape[0], _CASE_PROJECTED, dtype=np.int64)
    screened = np.linalg.norm(V, axis=1) < gamma_bar
    cases[screened] = _CASE_SCREENED
    Z = np.zeros_like(V)
    active = np.flatnonzero(~screened)
    if active.size == 0:
        return Z, cases

    Va = V[active]
    if lambda_bar == 0.0 or design.rank == 0:
        Za = Va.copy()
    else:
        U, s2 = design.left_vectors, design.nonzero_singular_sq
        W = Va @ U
        projected = np.sum(W**2 / s2, axis=1) <= lambda_bar**2
        weights = np.ones_like(W)
        far = np.flatnonzero(~projected)
        if far.size:
            taus = _solve_taus(W[far], s2, lambda_bar, design.equal_spectrum)
            weights[far] = s2 / (s2 + taus[:, None])
            cases[active[far]] = _CASE_TAU
        Za = Va - (W * weights) @ U.T

    Z[active] = _shrink(Za, gamma_bar)
    return Z, cases


def prox_rows(design: OddsDesign, V: np.ndarray, lambda_bar: float, gamma_bar: float) -> np.ndarray:
    """
    Apply the prox to every row of V.

    Args:
        design (OddsDesign): The design.
        V (np.ndarray): m x T matrix of points.
        lambda_bar (float): Weight of ||D'eta||.
        gamma_bar (float): Weight of ||eta||.

    Raises:
        DomainError: If the rows have the wrong length or a weight is negative.

    Returns:
        np.ndarray: m x T matrix of minimizers. Screened rows are exactly zero.
    """
    return _prox_with_cases(design, V, lambda_bar, gamma_bar)[0]


def prox_cases(design: OddsDesign, V: np.ndarray, lambda_bar: float, gamma_bar: float) -> np.ndarray:
    """Which closed-form case (1 screened, 2 projected, 3 tau) handled every row of V."""
    return _prox_with_cases(design, V, lambda_bar, gamma_bar)[1]


def prox_row(design: OddsDesign, nu: np.ndarray, lambda_bar: float, gamma_bar: float) -> np.ndarray:
    """
    Closed-form prox of one row.

    Args:
        design (OddsDesign): The design.
        nu (np.ndarray): The point, length T.
        lambda_bar (float): Weight of ||D'eta||, nonnegative.
        gamma_bar (float): Weight of ||eta||, nonnegative.

    Raises:
        DomainError: If nu has the wrong length or a weight is negative.

    Returns:
        np.ndarray: The unique minimizer.

    Examples:
        >>> prox_row(build_bivariate_design(2, 2), np.array([2.0, 2.0, 0.0, 0.0]), 1.0, np.sqrt(2)).round(12).tolist()
        [1.0, 1.0, 0.0, 0.0]
    """

    problem = ProxInput(design, nu, lambda_bar, gamma_bar)
    return prox_rows(design, problem.nu[None, :], problem.lambda_bar, problem.gamma_bar)[0]


def solve_tau(design: OddsDesign, nu: np.ndarray, lambda_bar: float) -> float:
    """
    The tau > 0 with ||(D'D + tau I)^{-1} D'nu|| = lambda_bar.

    Uses the closed form when the nonzero spectrum of D is flat, and a bracketed root finder polished by Newton
    steps otherwise or when the closed form misses the residual tolerance.

    Args:
        design (OddsDesign): The design.
        nu (np.ndarray): The point, length T.
        lambda_bar (float): Positive weight.

    Raises:
        DomainError: If ||(D'D)^- D'nu|| <= lambda_bar (no positive root) or lambda_bar <= 0.

    Returns:
        float: tau.
    """

    problem = ProxInput(design, nu, lambda_bar, 0.0)
    if lambda_bar <= 0:
        raise DomainError("lambda_bar must be positive to solve for tau", argument="lambda_bar", value=lambda_bar)
    W = (problem.nu @ design.left_vectors)[None, :]
    if np.sum(W**2 / design.nonzero_singular_sq) <= lambda_bar**2:
        raise DomainError(
            "No positive tau: the projection case applies since ||(D'D)^- D'nu|| <= lambda_bar",
            argument="lambda_bar",
            value=lambda_bar,
        )
    return float(_solve_taus(W, design.nonzero_singular_sq, lambda_bar, design.equal_spectrum)[0])


def tau_residual(design: OddsDesign, nu: np.ndarray, lambda_bar: float, tau: float) -> float:
    """||(D'D + tau I)^{-1} D'nu|| - lambda_bar, evaluated through the cached spectrum."""
    W = np.asarray(nu, dtype=float) @ design.left_vectors
    return float(_residual(W[None, :] ** 2, design.nonzero_singular_sq, lambda_bar, np.array([tau]))[0])


def prox_2x2(nu: np.ndarray, lambda_bar: float, gamma_bar: float) -> np.ndarray:
    """
    Prox for a 2 x 2 layout without any linear algebra.

    With nu_dd = nu_1 - nu_2 - nu_3 + nu_4 and D = (1, -1, -1, 1)', the unshrunk solution is nu - (nu_dd / 4) D
    when |nu_dd| <= 4 lambda_bar, and nu - sign(nu_dd) lambda_bar D otherwise.

    Args:
        nu (np.ndarray): The point, length 4.
        lambda_bar (float): Weight of ||D'eta||.
        gamma_bar (float): Weight of ||eta||.

    Raises:
        DomainError: If nu does not have length 4 or a weight is negative.

    Returns:
        np.ndarray: The minimizer.

    Examples:
        >>> prox_2x2(np.array([4.0, 1.0, 1.0, 0.0]), 0.5, 0.0).tolist()
        [3.5, 1.5, 1.5, -0.5]
    """

    nu = np.asarray(nu, dtype=float)
    if nu.shape != (4,):
        raise DomainError("prox_2x2 needs a vector of length 4", argument="nu", value=nu.shape)
    if lambda_bar < 0 or gamma_bar < 0:
        raise DomainError(
            "Penalty weights must be nonnegative", argument="lambda_bar, gamma_bar", value=(lambda_bar, gamma_bar)
        )
    contrast = np.array([1.0, -1.0, -1.0, 1.0])
    nu_dd = nu[0] - nu[1] - nu[2] + nu[3]
    if abs(nu_dd) <= 4 * lambda_bar:
        eta = nu - (nu_dd / 4) * contrast
    elif nu_dd > 4 * lambda_bar:
        eta = nu - lambda_bar * contrast
    else:
        eta = nu + lambda_bar * contrast
    return _shrink(eta[None, :], gamma_bar)[0]


def soft_threshold(V: np.ndarray, threshold: float) -> np.ndarray:
    """Entrywise prox of threshold * ||.||_1."""
    V = np.asarray(V, dtype=float)
    return np.sign(V) * np.maximum(np.abs(V) - threshold, 0.0)


def numerical_prox_oracle(problem: ProxInput, iterations: int = 100, tol: float = _ORACLE_FINAL_LEVEL) -> np.ndarray:
    """
    Reference solver for the prox problem, independent of the closed form.

    Both norms are smoothed, ||v|| -> sqrt(||v||^2 + eps^2), and the smooth problem is minimized by damped Newton
    steps with an Armijo line search. eps is driven from 1 + ||nu|| down to tol * (1 + ||nu||), each level warm
    started from the previous one, so the objective is within (lambda_bar + gamma_bar) * tol * (1 + ||nu||) of the
    true minimum. Slow; meant for tests and the self-test command.

    Args:
        problem (ProxInput): The problem.
        iterations (int, optional): Newton iterations allowed per smoothing level. Defaults to 100.
        tol (float, optional): Final relative smoothing level. Defaults to 1e-14.

    Raises:
        OracleConvergenceError: If Newton does not converge at the final smoothing level.

    Returns:
        np.ndarray: The minimizer.
    """

    nu, lam, gam = problem.nu, problem.lambda_bar, problem.gamma_bar
    if lam == 0.0 and gam == 0.0:
        return nu.copy()

    M = (problem.design.D @ problem.design.D.T).astype(float)
    identity = np.eye(nu.size)
    scale = 1.0 + float(np.linalg.norm(nu))
    rounding = 4 * np.finfo(float).eps

    def smoothed(eta: np.ndarray, eps: float) -> float:
        return float(
            0.5 * np.sum((eta - nu) ** 2) + lam * np.sqrt(eta @ M @ eta + eps**2) + gam * np.sqrt(eta @ eta + eps**2)
        )

    eta = nu.copy()
    levels = [level for level in _ORACLE_LEVELS if level > tol] + [tol]
    for level_index, level in enumerate(levels):
        eps = level * scale
        converged = False
        for _ in range(iterations):
            Meta = M @ eta
            a = np.sqrt(eta @ Meta + eps**2)
            b = np.sqrt(eta @ eta + eps**2)
            grad = (eta - nu) + lam * Meta / a + gam * eta / b
            hessian = (
                identity
                + lam * (M / a - np.outer(Meta, Meta) / a**3)
                + gam * (identity / b - np.outer(eta, eta) / b**3)
            )
            step = -scipy.linalg.solve(hessian, grad, assume_a="pos")
            if np.linalg.norm(step) <= 1e-13 * (1.0 + np.linalg.norm(eta)):
                converged = True
                break

            current = smoothed(eta, eps)
            slope = float(grad @ step)
            t = 1.0
            while smoothed(eta + t * step, eps) > current + 1e-4 * t * slope + rounding * abs(current):
                t *= 0.5
                if t < 1e-20:
                    break
            eta = eta + t * step
        if not converged and level_index == len(levels) - 1:
            raise OracleConvergenceError(
                "Reference prox solver did not converge",
                iteration=iterations,
                detail=f"lambda_bar={lam}, gamma_bar={gam}, eps={eps:.3g}",
            )
    return eta


def run_selftest(trials: int = 1000, seed: int = 0, max_categories: int = 4) -> SelftestReport:
    """
    Compare the closed-form prox with the reference solver on random problems.

    Each trial draws J, K in 2..max_categories, lambda_bar and gamma_bar uniform on [0, 3] and nu with N(0, 4)
    entries. Also reports the worst tau residual over the trials that needed tau and the worst disagreement of
    prox_2x2 with prox_row over the same number of random 2 x 2 inputs.

    Args:
        trials (int, optional): Number of random problems. Defaults to 1000.
        seed (int, optional): Seed. Defaults to 0.
        max_categories (int, optional): Largest J and K. Defaults to 4.

    Raises:
        DomainError: If trials < 1 or max_categories < 2.
        OracleConvergenceError: If the reference solver fails.

    Returns:
        SelftestReport: The summary.
    """

    if trials < 1:
        raise DomainError("At least one trial is needed", argument="trials", value=trials)
    if max_categories < 2:
        raise DomainError("max_categories must be at least 2", argument="max_categories", value=max_categories)

    start = time.perf_counter()
    rng = make_rng(seed)
    max_deviation = max_tau_residual = max_2x2 = 0.0
    case_names = {_CASE_SCREENED: "screened", _CASE_PROJECTED: "projected", _CASE_TAU: "tau"}
    case_counts = {name: 0 for name in case_names.values()}
    design_2x2 = build_bivariate_design(2, 2)
    for _ in range(trials):
        J, K = (int(v) for v in rng.integers(2, max_categories + 1, size=2))
        design = build_bivariate_design(J, K)
        lambda_bar, gamma_bar = (float(v) for v in rng.uniform(0.0, 3.0, size=2))
        nu = rng.normal(0.0, 2.0, size=J * K)
        problem = ProxInput(design, nu, lambda_bar, gamma_bar)

        closed, cases = _prox_with_cases(design, nu[None, :], lambda_bar, gamma_bar)
        case = int(cases[0])
        case_counts[case_names[case]] += 1
        max_deviation = max(max_deviation, float(np.linalg.norm(closed[0] - numerical_prox_oracle(problem))))
        if case == _CASE_TAU:
            tau = solve_tau(design, nu, lambda_bar)
            max_tau_residual = max(max_tau_residual, abs(tau_residual(design, nu, lambda_bar, tau)))

        small = rng.normal(0.0, 2.0, size=4)
        lam4, gam4 = (float(v) for v in rng.uniform(0.0, 3.0, size=2))
        deviation = np.abs(prox_2x2(small, lam4, gam4) - prox_row(design_2x2, small, lam4, gam4)).max()
        max_2x2 = max(max_2x2, float(deviation))

    report: SelftestReport = {
        "trials": trials,
        "seed": seed,
        "max_oracle_deviation": max_deviation,
        "max_tau_residual": max_tau_residual,
        "max_2x2_deviation": max_2x2,
        "case_counts": case_counts,
        "seconds": time.perf_counter() - start,
    }
    logger.info(f"Prox self-test: {trials} trials, max deviation from the reference solver {max_deviation:.3e}")
    return report
