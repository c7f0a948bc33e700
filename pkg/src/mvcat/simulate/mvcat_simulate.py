"""
Simulation designs and replicate experiments.

Predictors are Gaussian with AR(1) correlation 0.5^|s-t|. Ten of the p coefficient rows are nonzero; depending on the
model, they either move the log odds ratios (entries iid Uniform(-3, 3)) or only the marginals (rows built from four
uniforms so that D'row = 0 for the 3 x 2 layout):

    model 1: 10 log odds rows
    model 2: 6 log odds rows, 4 marginal-only rows
    model 3: 3 log odds rows, 7 marginal-only rows
    model 4: 10 marginal-only rows

Every replicate draws its own truth, training, validation and test sets from an independent random substream, tunes
each method on the validation set and reports test metrics.

Environment variables:
    MVCAT_REPLICATES: Default number of replicates. Defaults to 20.

Classes:
    SimConfig: Simulation settings.
    TrueModel: Generating coefficients and their predictor partition.
    ReplicateData: Everything drawn for one replicate.

Functions:
    gen_predictors(n, p, rng) -> np.ndarray
    gen_beta(model_id, p, layout, rng) -> TrueModel
    sample_responses(beta_star, X, rng) -> np.ndarray
    indicator_to_categories(layout, Y) -> np.ndarray
    mask_training(train, share) -> Dataset
    generate_replicate(sim, replicate) -> ReplicateData
    run_replicate(sim, replicate, methods, config, timing) -> list[dict]
    run_experiment(sim, methods, config, threads, timing) -> list[dict]
    summarize(rows) -> list[dict]
    error_decay(sim, sample_sizes, method, config, threads) -> dict[int, float]
"""

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from dotenv import load_dotenv
from scipy.signal import lfilter

from mvcat.design.mvcat_design import (
    CategoryLayout,
    CoefficientMatrix,
    OddsDesign,
    PredictorPartition,
    build_design,
    class_table,
)
from mvcat.error.mvcat_error import DomainError
from mvcat.likelihood.mvcat_likelihood import Dataset, Standardization, joint_probabilities, make_dataset
from mvcat.log.mvcat_logger import logger
from mvcat.number.mvcat_random import choose_without_replacement, make_rng, spawn_seeds
from mvcat.solver.mvcat_solver import FitConfig, gamma_max
from mvcat.tuning.mvcat_tuning import (
    Criterion,
    DEFAULT_N_GAMMA,
    DEFAULT_N_LAMBDA,
    TuningGrid,
    default_grid,
    joint_misclassification,
    kl_divergence,
    marginal_misclassification,
    select_by_validation,
)

load_dotenv()

#######################
# Constants definitions
#######################

DEFAULT_REPLICATES = int(os.getenv("MVCAT_REPLICATES", "20"))

AR_CORRELATION = 0.5
UNIFORM_BOUND = 3.0
N_NONZERO = 10

# (log odds rows, marginal-only rows) per model
MODEL_COUNTS = {1: (10, 0), 2: (6, 4), 3: (3, 7), 4: (0, 10)}

# The marginal-only row construction is specific to this layout
MARGINAL_ROW_LAYOUT = (3, 2)

# lambda of the separate-models baseline, relative to gamma_max
SEPARATE_LAMBDA_FACTOR = 1e6

LO_MULT, G_MULT, L_MULT, SEP, ORACLE = "LO-Mult", "G-Mult", "L-Mult", "Sep", "Oracle"
METHODS = (LO_MULT, G_MULT, L_MULT, SEP, ORACLE)

# Methods that first hide response 2 on a share of the training rows; run only on request
LO_SEMI, LO_COMPLETE = "LO-Semi", "LO-Complete"
MASKING_METHODS = (LO_SEMI, LO_COMPLETE)
ALL_METHODS = METHODS + MASKING_METHODS

# Share of training rows whose response 2 the masking methods hide
DEFAULT_MASK_SHARE = 0.25

RESULT_COLUMNS = [
    "replicate",
    "method",
    "joint_err",
    "marg_err_1",
    "marg_err_2",
    "kl",
    "frobenius_err",
    "chosen_lambda",
    "chosen_gamma",
    "seconds",
]


#####################
# Classes definitions
#####################


@dataclass(frozen=True)
class SimConfig:
    """
    Simulation settings.

    Args:
        model_id (int): 1, 2, 3 or 4.
        p (int, optional): Predictors besides the intercept, at least 10. Defaults to 100.
        n_train (int, optional): Training rows. Defaults to 300.
        n_valid (int, optional): Validation rows. Defaults to 500.
        n_test (int, optional): Test rows. Defaults to 10000.
        cardinalities (tuple[int, int], optional): Bivariate layout. Defaults to (3, 2); models 2-4 need (3, 2).
        replicates (int, optional): Replicates. Defaults to MVCAT_REPLICATES.
        seed (int, optional): Root seed. Defaults to 0.
        n_gamma (int, optional): Gamma grid size. Defaults to MVCAT_N_GAMMA.
        n_lambda (int, optional): Lambda grid size. Defaults to MVCAT_N_LAMBDA.
        mask_share (float, optional): Share of training rows whose response 2 LO-Semi and LO-Complete hide, in
            [0, 1). Defaults to 0.25.

    Raises:
        DomainError: If a setting is out of range or the layout does not suit the model.
    """

    model_id: int
    p: int = 100
    n_train: int = 300
    n_valid: int = 500
    n_test: int = 10_000
    cardinalities: tuple[int, ...] = MARGINAL_ROW_LAYOUT
    replicates: int = DEFAULT_REPLICATES
    seed: int = 0
    n_gamma: int = DEFAULT_N_GAMMA
    n_lambda: int = DEFAULT_N_LAMBDA
    mask_share: float = DEFAULT_MASK_SHARE

    def __post_init__(self) -> None:
        if self.model_id not in MODEL_COUNTS:
            raise DomainError("Model must be 1, 2, 3 or 4", argument="model_id", value=self.model_id)
        if self.p < N_NONZERO:
            raise DomainError(f"p must be at least {N_NONZERO}", argument="p", value=self.p)
        for name in ("n_train", "n_valid", "n_test", "replicates", "n_gamma", "n_lambda"):
            if getattr(self, name) < 1:
                raise DomainError("Sizes must be positive", argument=name, value=getattr(self, name))
        if self.seed < 0:
            raise DomainError("Seed must be nonnegative", argument="seed", value=self.seed)
        if not 0.0 <= self.mask_share < 1.0:
            raise DomainError("Mask share must be in [0, 1)", argument="mask_share", value=self.mask_share)
        cardinalities = tuple(int(k) for k in self.cardinalities)
        if len(cardinalities) != 2:
            raise DomainError("Simulations use a bivariate layout", argument="cardinalities", value=cardinalities)
        if self.model_id != 1 and cardinalities != MARGINAL_ROW_LAYOUT:
            raise DomainError(
                f"Model {self.model_id} is only defined for the 3 x 2 layout", argument="cardinalities",
                value=cardinalities,
            )
        object.__setattr__(self, "cardinalities", cardinalities)

    @property
    def layout(self) -> CategoryLayout:
        return CategoryLayout(self.cardinalities)


@dataclass(frozen=True, eq=False)
class TrueModel:
    """
    Generating coefficients.

    Attributes:
        beta_star (CoefficientMatrix): (p + 1) x T coefficients with a zero intercept row.
        partition (PredictorPartition): Which rows were built to move log odds ratios or only marginals.
    """

    beta_star: CoefficientMatrix
    partition: PredictorPartition


class ReplicateData(NamedTuple):
    """Truth and data of one replicate; test_probabilities are the true joint probabilities of the test rows."""

    truth: TrueModel
    train: Dataset
    valid: Dataset
    test: Dataset
    test_probabilities: np.ndarray


######################
# Function definitions
######################


def gen_predictors(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """
    n iid rows of N(0, Sigma) with Sigma_st = 0.5^|s - t|.

    Columns follow x_t = 0.5 x_{t-1} + sqrt(0.75) e_t with x_1 = e_1, which has exactly that covariance.

    Raises:
        DomainError: If n or p is less than 1.
    """

    if n < 1 or p < 1:
        raise DomainError("n and p must be positive", argument="n, p", value=(n, p))
    innovations = rng.standard_normal((n, p))
    gain = math.sqrt(1.0 - AR_CORRELATION**2)
    innovations[:, 0] /= gain
    return lfilter([gain], [1.0, -AR_CORRELATION], innovations, axis=1)


def _marginal_only_row(rng: np.random.Generator) -> np.ndarray:
    u1, u2, u3, u4 = rng.uniform(-UNIFORM_BOUND, UNIFORM_BOUND, size=4)
    return np.array([-u4 + u3 + u1, u1, u2, u3, u4, -u1 + u4 + u2])


def gen_beta(model_id: int, p: int, layout: CategoryLayout, rng: np.random.Generator) -> TrueModel:
    """
    Draw the generating coefficients of a model.

    Ten rows among 2..p+1 are chosen uniformly without replacement; the first ones drawn get iid Uniform(-3, 3)
    entries, the rest are marginal-only rows (-u4 + u3 + u1, u1, u2, u3, u4, -u1 + u4 + u2).

    Args:
        model_id (int): 1, 2, 3 or 4.
        p (int): Predictors besides the intercept.
        layout (CategoryLayout): Response layout.
        rng (np.random.Generator): Source of randomness.

    Raises:
        DomainError: If the model is unknown, p < 10, or marginal-only rows are needed with a layout other
            than 3 x 2.

    Returns:
        TrueModel: Coefficients and partition.
    """

    if model_id not in MODEL_COUNTS:
        raise DomainError("Model must be 1, 2, 3 or 4", argument="model_id", value=model_id)
    n_log_odds, n_marginal = MODEL_COUNTS[model_id]
    if n_marginal and layout.cardinalities != MARGINAL_ROW_LAYOUT:
        raise DomainError(
            f"Model {model_id} marginal-only rows need the 3 x 2 layout", argument="layout", value=str(layout)
        )
    if p < N_NONZERO:
        raise DomainError(f"p must be at least {N_NONZERO}", argument="p", value=p)

    beta = np.zeros((p + 1, layout.total_classes))
    rows = choose_without_replacement(rng, p, N_NONZERO) + 1  # 0-based rows of beta, skipping the intercept
    log_odds_rows, marginal_rows = rows[:n_log_odds], rows[n_log_odds:]
    for row in log_odds_rows:
        beta[row] = rng.uniform(-UNIFORM_BOUND, UNIFORM_BOUND, size=layout.total_classes)
    for row in marginal_rows:
        beta[row] = _marginal_only_row(rng)

    chosen = set(rows.tolist())
    partition = PredictorPartition(
        log_odds=tuple(sorted(int(r) + 1 for r in log_odds_rows)),
        marginal=tuple(sorted(int(r) + 1 for r in marginal_rows)),
        irrelevant=tuple(r + 1 for r in range(1, p + 1) if r not in chosen),
    )
    return TrueModel(CoefficientMatrix(beta, layout), partition)


def sample_responses(beta_star: CoefficientMatrix, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    One multinomial draw per row from the joint probabilities, by inverse CDF on a single uniform.

    Args:
        beta_star (CoefficientMatrix): Coefficients.
        X (np.ndarray): n x p design with intercept column.
        rng (np.random.Generator): Source of randomness.

    Returns:
        np.ndarray: n x T 0/1 indicator matrix with one 1 per row.
    """

    P = joint_probabilities(beta_star, X)
    cumulative = np.cumsum(P, axis=1)
    u = rng.random(P.shape[0])
    classes = np.minimum((cumulative < u[:, None]).sum(axis=1), P.shape[1] - 1)
    Y = np.zeros_like(P, dtype=np.int64)
    Y[np.arange(P.shape[0]), classes] = 1
    return Y


def indicator_to_categories(layout: CategoryLayout, Y: np.ndarray) -> np.ndarray:
    """1-based categories of every row of a one-hot indicator matrix."""
    return class_table(layout)[np.argmax(Y, axis=1)]


def _draw_split(truth: TrueModel, n: int, p: int, rng: np.random.Generator) -> tuple[Dataset, np.ndarray]:
    layout = truth.beta_star.layout
    raw = gen_predictors(n, p, rng)
    Y = sample_responses(truth.beta_star, Standardization.identity(p).apply(raw), rng)
    data = make_dataset(raw, indicator_to_categories(layout, Y), layout, standardize=False)
    return data, joint_probabilities(truth.beta_star, data.X)


def generate_replicate(sim: SimConfig, replicate: int) -> ReplicateData:
    """
    Draw the truth and the three datasets of one replicate from its own substream.

    Raises:
        DomainError: If the replicate index is not in 0..replicates-1.
    """

    if not 0 <= replicate < sim.replicates:
        raise DomainError(f"Replicate must be in 0..{sim.replicates - 1}", argument="replicate", value=replicate)
    rng = make_rng(spawn_seeds(sim.seed, sim.replicates)[replicate])
    truth = gen_beta(sim.model_id, sim.p, sim.layout, rng)
    train, _ = _draw_split(truth, sim.n_train, sim.p, rng)
    valid, _ = _draw_split(truth, sim.n_valid, sim.p, rng)
    test, test_probabilities = _draw_split(truth, sim.n_test, sim.p, rng)
    return ReplicateData(truth, train, valid, test, test_probabilities)


def _evaluation_row(
    replicate: int,
    method: str,
    beta: CoefficientMatrix,
    data: ReplicateData,
    lam: float,
    gamma: float,
    seconds: float,
) -> dict:
    test = data.test
    estimated = joint_probabilities(beta, test.X)
    truth = data.truth.beta_star.row_centered().values
    return {
        "replicate": replicate,
        "method": method,
        "joint_err": joint_misclassification(beta, test),
        "marg_err_1": marginal_misclassification(beta, test, 1),
        "marg_err_2": marginal_misclassification(beta, test, 2),
        "kl": kl_divergence(data.test_probabilities, estimated),
        "frobenius_err": float(np.linalg.norm(beta.row_centered().values - truth)),
        "chosen_lambda": lam,
        "chosen_gamma": gamma,
        "seconds": seconds,
    }


def mask_training(train: Dataset, share: float) -> Dataset:
    """
    Hide response 2 on the first round(share * n) training rows, keeping at least one complete row.

    Training rows are drawn independently, so the first rows are as good as a random subset.

    Raises:
        DomainError: If share is not in [0, 1).
    """

    if not 0.0 <= share < 1.0:
        raise DomainError("Mask share must be in [0, 1)", argument="share", value=share)
    hidden = min(int(round(share * train.n)), train.n - 1)
    return train.with_missing(2, np.arange(hidden))


def _training_rows(method: str, sim: SimConfig, train: Dataset) -> Dataset:
    if method not in MASKING_METHODS:
        return train
    masked = mask_training(train, sim.mask_share)
    return masked if method == LO_SEMI else masked.subset(masked.complete_rows)


def _method_setup(
    method: str, sim: SimConfig, train: Dataset, design: OddsDesign, config: FitConfig
) -> tuple[TuningGrid, FitConfig, Criterion]:
    if method == LO_SEMI:
        grid = default_grid(train, design, sim.n_gamma, sim.n_lambda, kind="observed")
        return grid, replace(config, objective_kind="observed"), "joint"
    if method in (LO_MULT, LO_COMPLETE):
        return default_grid(train, design, sim.n_gamma, sim.n_lambda), config, "joint"
    if method == L_MULT:
        gammas = default_grid(train, design, sim.n_gamma, 1, penalty="lasso").gammas
        return TuningGrid(gammas, (0.0,), relative_lambda=False), replace(config, penalty="lasso"), "joint"
    gammas = default_grid(train, design, sim.n_gamma, 1).gammas
    if method == G_MULT:
        return TuningGrid(gammas, (0.0,), relative_lambda=False), config, "joint"
    big_lambda = SEPARATE_LAMBDA_FACTOR * gamma_max(train, design)
    return TuningGrid(gammas, (big_lambda,), relative_lambda=False), config, "marginal"


def run_replicate(
    sim: SimConfig,
    replicate: int,
    methods: tuple[str, ...] | list[str] = METHODS,
    config: FitConfig | None = None,
    timing: bool = True,
) -> list[dict]:
    """
    Run every requested method on one replicate.

    LO-Mult tunes (gamma, lambda / gamma) on the default grid; G-Mult fixes lambda = 0; L-Mult uses the entrywise l1
    penalty; Sep fixes lambda = 1e6 gamma_max and picks gamma by the summed marginal validation error; Oracle
    evaluates the generating coefficients. LO-Semi hides response 2 on a mask_share of the training rows and fits the
    observed likelihood on all of them; LO-Complete fits the same masked data on its complete rows only.

    Args:
        sim (SimConfig): Settings.
        replicate (int): Replicate index.
        methods (tuple[str, ...], optional): Subset of ALL_METHODS. Defaults to METHODS.
        config (FitConfig, optional): Solver settings. Defaults to FitConfig().
        timing (bool, optional): Record wall time per method; 0.0 otherwise. Defaults to True.

    Raises:
        DomainError: If a method is unknown.

    Returns:
        list[dict]: One result row per method, keyed by RESULT_COLUMNS.
    """

    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise DomainError(f"Unknown method(s) {unknown}; choose from {list(ALL_METHODS)}", argument="methods")
    config = config if config is not None else FitConfig()
    data = generate_replicate(sim, replicate)
    design = build_design(sim.layout)
    train, valid = data.train, data.valid

    rows = []
    for method in methods:
        start = time.perf_counter()
        if method == ORACLE:
            beta, lam, gamma = data.truth.beta_star, math.nan, math.nan
        else:
            fit_rows = _training_rows(method, sim, train)
            grid, method_config, criterion = _method_setup(method, sim, fit_rows, design, config)
            selection = select_by_validation(fit_rows, valid, design, grid, method_config, criterion=criterion)
            beta, lam, gamma = selection.fit.beta, selection.lam, selection.gamma
        seconds = time.perf_counter() - start if timing else 0.0
        rows.append(_evaluation_row(replicate, method, beta, data, lam, gamma, seconds))
        logger.debug(f"Replicate {replicate}, {method}: joint error {rows[-1]['joint_err']:.4f}")
    return rows


def run_experiment(
    sim: SimConfig,
    methods: tuple[str, ...] | list[str] = METHODS,
    config: FitConfig | None = None,
    threads: int = 1,
    timing: bool = True,
) -> list[dict]:
    """
    Run all replicates, up to threads at a time.

    Rows come back ordered by replicate, then by the order of methods, whatever the thread count.

    Returns:
        list[dict]: Result rows keyed by RESULT_COLUMNS.
    """

    logger.info(f"Simulating model {sim.model_id}: p={sim.p}, {sim.replicates} replicate(s), methods {list(methods)}")
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        per_replicate = list(
            executor.map(lambda r: run_replicate(sim, r, methods, config, timing), range(sim.replicates))
        )
    return [row for rows in per_replicate for row in rows]


def summarize(rows: list[dict]) -> list[dict]:
    """Per-method medians of the metrics, methods in first-seen order."""
    methods = list(dict.fromkeys(row["method"] for row in rows))
    metrics = ["joint_err", "marg_err_1", "marg_err_2", "kl", "frobenius_err", "seconds"]
    summary = []
    for method in methods:
        selected = [row for row in rows if row["method"] == method]
        entry: dict = {"method": method, "replicates": len(selected)}
        for metric in metrics:
            entry[f"median_{metric}"] = float(np.median([row[metric] for row in selected]))
        summary.append(entry)
    return summary


def error_decay(
    sim: SimConfig,
    sample_sizes: tuple[int, ...] = (150, 600),
    method: str = LO_MULT,
    config: FitConfig | None = None,
    threads: int = 1,
) -> dict[int, float]:
    """
    Median Frobenius error of one method's estimate as the training size grows.

    Returns:
        dict[int, float]: Median ||beta_hat - beta_star||_F (rows centered) per training size.
    """

    decay = {}
    for n in sample_sizes:
        rows = run_experiment(replace(sim, n_train=int(n)), (method,), config, threads, timing=False)
        decay[int(n)] = float(np.median([row["frobenius_err"] for row in rows]))
        logger.info(f"n_train={n}: median Frobenius error {decay[int(n)]:.4f}")
    return decay
