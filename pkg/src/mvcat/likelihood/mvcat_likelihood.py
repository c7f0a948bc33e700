"""
Multinomial likelihood of the joint class, fully observed and semi-supervised.

Every observation is one multinomial trial over the T joint classes. A row whose responses are all observed marks
exactly one class in Y; a row with some responses missing marks every class consistent with the observed ones, so
the observed-data likelihood of the row is the sum of the joint probabilities over its marked classes (the
marginal probability of what was seen). With this encoding the fully observed and the semi-supervised losses share
one formula and the observed-data gradient is -(1/n) X'Q with Q = Y * P / (P Y-row sums) - P.

Classes:
    Standardization: Per-column centering and scaling of the predictors.
    Dataset: Standardized predictors with intercept, response indicators and observedness masks.
    ConditionalProbabilities: Marginal and conditional probabilities of a bivariate model.

Functions:
    indicator_matrix(layout, categories) -> np.ndarray
    make_dataset(raw_predictors, categories, layout, ...) -> Dataset
    linear_predictor(beta, X) -> np.ndarray
    joint_probabilities(beta, X) -> np.ndarray
    nll(beta, data) -> float
    gradient(beta, data) -> np.ndarray
    observed_nll(beta, data) -> float
    observed_gradient(beta, data) -> np.ndarray
    loss(beta, data, kind) -> float
    loss_gradient(beta, data, kind) -> np.ndarray
    row_log_likelihood(beta, data) -> np.ndarray
    conditional_and_marginal_probabilities(beta, X, layout) -> ConditionalProbabilities
    penalty_value(beta, design, lam, gamma, penalty) -> float
    objective(beta, data, design, lam, gamma, kind, penalty) -> float
"""

from dataclasses import dataclass, field, replace
from typing import Literal, NamedTuple

import numpy as np
from scipy.special import logsumexp

from mvcat.design.mvcat_design import (
    CategoryLayout,
    CoefficientMatrix,
    OddsDesign,
    class_table,
    coefficient_values,
    joint_to_array,
    log_odds_norms,
)
from mvcat.error.mvcat_error import ContractViolationError, DataError, DomainError, NumericError
from mvcat.log.mvcat_logger import logger

#######################
# Constants definitions
#######################

# Floor applied to probabilities before taking logs in reported deviances
PROBABILITY_FLOOR = 1e-300

# Columns with a population standard deviation at or below this (relative to their magnitude) are constant
_CONSTANT_COLUMN_TOL = 1e-12

ObjectiveKind = Literal["full", "observed"]
PenaltyKind = Literal["log_odds", "lasso"]


#####################
# Classes definitions
#####################


@dataclass(frozen=True, eq=False)
class Standardization:
    """
    Centering and scaling of predictor columns 2..p.

    After fit(), every column of the standardized training matrix has mean 0 and squared norm n. The same record is
    applied unchanged to validation, test and prediction data.

    Attributes:
        center (np.ndarray): Column means.
        scale (np.ndarray): Column population standard deviations.
    """

    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls, n_columns: int) -> "Standardization":
        """The record that leaves columns unchanged."""
        return cls(np.zeros(n_columns), np.ones(n_columns))

    @classmethod
    def fit(
        cls, raw: np.ndarray, names: tuple[str, ...] | None = None, allow_constant: bool = False
    ) -> "Standardization":
        """
        Compute the record from raw predictor columns.

        Args:
            raw (np.ndarray): n x (p - 1) raw predictors, no intercept column.
            names (tuple[str, ...], optional): Column names used in messages.
            allow_constant (bool, optional): Give constant columns scale 1 and log a warning instead of raising.
                Training folds use this, since a column that varies overall can be constant on a fold.
                Defaults to False.

        Raises:
            DataError: If a column is constant and allow_constant is False. All constant columns are named.

        Returns:
            Standardization: The record.
        """

        raw = np.asarray(raw, dtype=float)
        center = raw.mean(axis=0)
        scale = raw.std(axis=0)
        constant = np.flatnonzero(scale <= _CONSTANT_COLUMN_TOL * np.maximum(1.0, np.abs(center)))
        if constant.size:
            labels = [names[c] if names else str(c + 1) for c in constant]
            if allow_constant:
                logger.warning(f"Constant predictor column(s) on this subset left unscaled: {', '.join(labels)}")
                scale = scale.copy()
                scale[constant] = 1.0
                return cls(center, scale)
            raise DataError(f"Constant predictor column(s) cannot be standardized: {', '.join(labels)}")
        return cls(center, scale)

    @property
    def n_columns(self) -> int:
        return int(self.center.size)

    def apply(self, raw: np.ndarray) -> np.ndarray:
        """
        Standardize raw predictors and prepend the intercept column.

        Raises:
            DomainError: If the number of columns does not match the record.
        """

        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        if raw.shape[1] != self.n_columns:
            raise DomainError(
                f"Expected {self.n_columns} predictor columns, got {raw.shape[1]}", argument="X", value=raw.shape
            )
        return np.column_stack([np.ones(raw.shape[0]), (raw - self.center) / self.scale])

    def as_dict(self) -> dict[str, list[float]]:
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    A design matrix and its responses.

    Use make_dataset() to build one from raw predictors and categories.

    Attributes:
        X (np.ndarray): n x p standardized predictors; column 1 is the constant 1.
        Y (np.ndarray): n x T indicator matrix. Fully observed rows have one 1; partially observed rows mark every
            class consistent with the observed categories.
        observed (np.ndarray): n x G boolean mask, True where the response is observed.
        categories (np.ndarray): n x G 1-based categories, 0 where missing.
        layout (CategoryLayout): Response layout.
        standardization (Standardization): Record used to build X from raw_predictors.
        raw_predictors (np.ndarray): n x (p - 1) predictors before standardization.
        predictor_names (tuple[str, ...]): Names of the raw predictor columns.
    """

    X: np.ndarray
    Y: np.ndarray
    observed: np.ndarray
    categories: np.ndarray
    layout: CategoryLayout
    standardization: Standardization
    raw_predictors: np.ndarray
    predictor_names: tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    @property
    def observed_1(self) -> np.ndarray:
        return self.observed[:, 0]

    @property
    def observed_2(self) -> np.ndarray:
        return self.observed[:, 1]

    @property
    def complete_rows(self) -> np.ndarray:
        """Mask of rows where every response is observed."""
        return self.observed.all(axis=1)

    @property
    def fully_observed(self) -> bool:
        return bool(self.complete_rows.all())

    def subset(self, rows: np.ndarray, restandardize: bool = False) -> "Dataset":
        """
        Rows of the dataset, in the given order.

        Args:
            rows (np.ndarray): Integer indices or a boolean mask.
            restandardize (bool, optional): Fit a new standardization on the subset (training folds). Otherwise
                the current record is kept (validation folds). Defaults to False.

        Returns:
            Dataset: The subset.
        """

        rows = np.flatnonzero(rows) if np.asarray(rows).dtype == bool else np.asarray(rows, dtype=np.int64)
        raw = self.raw_predictors[rows]
        standardization = self.standardization
        if restandardize:
            standardization = Standardization.fit(raw, self.predictor_names, allow_constant=True)
        return replace(
            self,
            X=standardization.apply(raw) if restandardize else self.X[rows],
            Y=self.Y[rows],
            observed=self.observed[rows],
            categories=self.categories[rows],
            standardization=standardization,
            raw_predictors=raw,
        )

    def standardized_with(self, standardization: Standardization) -> "Dataset":
        """The same rows with X rebuilt from raw_predictors using another record (usually the training one)."""
        return replace(self, X=standardization.apply(self.raw_predictors), standardization=standardization)

    def with_missing(self, response: int, rows: np.ndarray) -> "Dataset":
        """
        Copy where the given response is marked missing on the given rows.

        Raises:
            DomainError: If the response index is out of range.
        """

        if not 1 <= response <= self.layout.n_responses:
            raise DomainError(
                f"Response index must be in 1..{self.layout.n_responses}", argument="response", value=response
            )
        categories = self.categories.copy()
        categories[rows, response - 1] = 0
        return replace(
            self,
            Y=indicator_matrix(self.layout, categories),
            observed=categories > 0,
            categories=categories,
        )


class ConditionalProbabilities(NamedTuple):
    """
    Marginal and conditional probabilities of a bivariate model, for n rows.

    marginal_1[i, j] = P(Y_1 = j), marginal_2[i, k] = P(Y_2 = k), cond_2_given_1[i, j, k] = P(Y_2 = k | Y_1 = j),
    cond_1_given_2[i, j, k] = P(Y_1 = j | Y_2 = k). Categories are 0-based array positions.
    """

    marginal_1: np.ndarray
    marginal_2: np.ndarray
    cond_2_given_1: np.ndarray
    cond_1_given_2: np.ndarray


######################
# Function definitions
######################


def indicator_matrix(layout: CategoryLayout, categories: np.ndarray) -> np.ndarray:
    """
    Response indicator matrix from 1-based categories (0 = missing).

    Args:
        layout (CategoryLayout): The layout.
        categories (np.ndarray): n x G integer matrix.

    Raises:
        DomainError: If the shape is wrong or a category is out of range.

    Returns:
        np.ndarray: n x T float matrix; entry (i, c) is 1 if class c agrees with every observed response of row i.
    """

    categories = np.atleast_2d(np.asarray(categories, dtype=np.int64))
    if categories.shape[1] != layout.n_responses:
        raise DomainError(
            f"Expected {layout.n_responses} response columns", argument="categories", value=categories.shape
        )
    for response, k in enumerate(layout.cardinalities):
        column = categories[:, response]
        bad = np.flatnonzero((column < 0) | (column > k))
        if bad.size:
            raise DomainError(
                f"Category of response {response + 1} must be in 1..{k} (0 for missing), row {bad[0] + 1}",
                argument="categories",
                value=int(column[bad[0]]),
            )
    table = class_table(layout)
    missing = categories[:, None, :] == 0
    agrees = categories[:, None, :] == table[None, :, :]
    return (missing | agrees).all(axis=2).astype(float)


def make_dataset(
    raw_predictors: np.ndarray,
    categories: np.ndarray,
    layout: CategoryLayout,
    standardize: bool = True,
    standardization: Standardization | None = None,
    predictor_names: tuple[str, ...] | list[str] | None = None,
) -> Dataset:
    """
    Build a Dataset from raw predictors (no intercept column) and 1-based categories (0 = missing).

    Rows where every response is missing carry no likelihood term; they are dropped with a warning.

    Args:
        raw_predictors (np.ndarray): n x (p - 1) real matrix. May have zero columns (intercept-only model).
        categories (np.ndarray): n x G integer matrix.
        layout (CategoryLayout): Response layout.
        standardize (bool, optional): Fit a standardization on these rows. Defaults to True.
        standardization (Standardization, optional): Apply this record instead of fitting one.
        predictor_names (list[str], optional): Column names, defaults to x1, x2, ...

    Raises:
        DomainError: If the shapes disagree or a category is out of range.
        DataError: If no row is left after dropping, or a column is constant while standardizing.

    Returns:
        Dataset: The dataset.
    """

    raw = np.asarray(raw_predictors, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    categories = np.atleast_2d(np.asarray(categories, dtype=np.int64))
    if raw.shape[0] != categories.shape[0]:
        raise DomainError(
            f"Predictors have {raw.shape[0]} rows but responses have {categories.shape[0]}",
            argument="categories",
            value=categories.shape,
        )
    if not np.isfinite(raw).all():
        row, column = np.argwhere(~np.isfinite(raw))[0]
        raise DataError("Non-finite predictor value", row=int(row) + 1, column=int(column) + 1)
    names = tuple(predictor_names) if predictor_names is not None else tuple(f"x{c + 1}" for c in range(raw.shape[1]))

    Y = indicator_matrix(layout, categories)
    observed = categories > 0
    keep = observed.any(axis=1)
    if not keep.all():
        logger.warning(f"Dropped {int((~keep).sum())} row(s) with every response missing")
        raw, categories, Y, observed = raw[keep], categories[keep], Y[keep], observed[keep]
    if raw.shape[0] == 0:
        raise DataError("Dataset is empty after dropping rows with every response missing")

    if standardization is None:
        standardization = Standardization.fit(raw, names) if standardize else Standardization.identity(raw.shape[1])
    return Dataset(
        X=standardization.apply(raw),
        Y=Y,
        observed=observed,
        categories=categories,
        layout=layout,
        standardization=standardization,
        raw_predictors=raw,
        predictor_names=names,
    )


def linear_predictor(beta: CoefficientMatrix | np.ndarray, X: np.ndarray) -> np.ndarray:
    """
    Z = X beta, checked for finiteness.

    Raises:
        DomainError: If the dimensions disagree.
        NumericError: If an entry is not finite. The first offending row is reported.
    """

    B = coefficient_values(beta)
    X = np.atleast_2d(X)
    if X.shape[1] != B.shape[0]:
        raise DomainError(f"X has {X.shape[1]} columns but beta has {B.shape[0]} rows", argument="X", value=X.shape)
    Z = X @ B
    finite = np.isfinite(Z).all(axis=1)
    if not finite.all():
        raise NumericError("Non-finite linear predictor", row=int(np.flatnonzero(~finite)[0]))
    return Z


def _log_partition(Z: np.ndarray) -> np.ndarray:
    # logsumexp subtracts the row maximum before exponentiating
    return logsumexp(Z, axis=1)


def joint_probabilities(beta: CoefficientMatrix | np.ndarray, X: np.ndarray) -> np.ndarray:
    """
    Joint class probabilities, one row per observation.

    Args:
        beta (CoefficientMatrix | np.ndarray): p x T coefficients.
        X (np.ndarray): n x p design, intercept column included.

    Raises:
        DomainError: If the dimensions disagree.
        NumericError: If a linear predictor is not finite.

    Returns:
        np.ndarray: n x T row-stochastic matrix.

    Examples:
        >>> joint_probabilities(np.log([[1.0, 2.0, 3.0, 4.0]]), np.ones((1, 1))).round(12).tolist()
        [[0.1, 0.2, 0.3, 0.4]]
    """

    Z = linear_predictor(beta, X)
    return np.exp(Z - _log_partition(Z)[:, None])


def _require_fully_observed(data: Dataset) -> None:
    if not data.fully_observed:
        missing = int((~data.complete_rows).sum())
        raise ContractViolationError(
            f"Full likelihood needs every response observed, {missing} row(s) have missing responses; "
            "use the observed-data likelihood"
        )


def _require_some_observed(data: Dataset) -> None:
    empty = np.flatnonzero(~data.observed.any(axis=1))
    if empty.size:
        raise ContractViolationError(f"Row {int(empty[0]) + 1} has every response missing")


def nll(beta: CoefficientMatrix | np.ndarray, data: Dataset) -> float:
    """
    Negative log-likelihood divided by n, G(beta) = -(1/n) sum_i [z_i,y_i - log sum_c exp(z_ic)].

    Raises:
        ContractViolationError: If some response is missing.
    """

    _require_fully_observed(data)
    Z = linear_predictor(beta, data.X)
    return float(np.mean(_log_partition(Z) - np.sum(data.Y * Z, axis=1)))


def gradient(beta: CoefficientMatrix | np.ndarray, data: Dataset) -> np.ndarray:
    """
    Gradient of nll, (1/n) X'(P - Y).

    Raises:
        ContractViolationError: If some response is missing.
    """

    _require_fully_observed(data)
    P = joint_probabilities(beta, data.X)
    return data.X.T @ (P - data.Y) / data.n


def observed_nll(beta: CoefficientMatrix | np.ndarray, data: Dataset) -> float:
    """
    Observed-data negative log-likelihood divided by n.

    A fully observed row contributes -log pi_c; a partially observed row contributes -log of the marginal
    probability of its observed categories. Equals nll when nothing is missing.

    Raises:
        ContractViolationError: If a row has every response missing.
    """

    _require_some_observed(data)
    Z = linear_predictor(beta, data.X)
    return float(np.mean(_log_partition(Z) - logsumexp(Z, axis=1, b=data.Y)))


def observed_gradient(beta: CoefficientMatrix | np.ndarray, data: Dataset) -> np.ndarray:
    """
    Gradient of observed_nll, -(1/n) X'Q.

    Q = Y * P / (sum of P over the row's marked classes) - P. For fully observed rows this is y - pi. For a
    bivariate row with only response 1 = j observed it is pi(k | j)(1 - pi_1(j)) at (j, k) and -pi_jk elsewhere,
    and symmetrically when only response 2 is observed.

    Raises:
        ContractViolationError: If a row has every response missing.
    """

    _require_some_observed(data)
    Z = linear_predictor(beta, data.X)
    log_partition = _log_partition(Z)
    P = np.exp(Z - log_partition[:, None])
    observed_log_partition = logsumexp(Z, axis=1, b=data.Y)
    Q = data.Y * np.exp(Z - observed_log_partition[:, None]) - P
    return -data.X.T @ Q / data.n


def loss(beta: CoefficientMatrix | np.ndarray, data: Dataset, kind: ObjectiveKind = "full") -> float:
    """nll or observed_nll depending on kind."""
    if kind == "full":
        return nll(beta, data)
    if kind == "observed":
        return observed_nll(beta, data)
    raise DomainError("Objective kind must be 'full' or 'observed'", argument="kind", value=kind)


def loss_gradient(beta: CoefficientMatrix | np.ndarray, data: Dataset, kind: ObjectiveKind = "full") -> np.ndarray:
    """gradient or observed_gradient depending on kind."""
    if kind == "full":
        return gradient(beta, data)
    if kind == "observed":
        return observed_gradient(beta, data)
    raise DomainError("Objective kind must be 'full' or 'observed'", argument="kind", value=kind)


def row_log_likelihood(beta: CoefficientMatrix | np.ndarray, data: Dataset) -> np.ndarray:
    """
    Observed-data log-likelihood of every row, with probabilities floored at 1e-300.
    Deviance is -2 times the sum.
    """

    P = joint_probabilities(beta, data.X)
    return np.log(np.maximum(np.sum(P * data.Y, axis=1), PROBABILITY_FLOOR))


def conditional_and_marginal_probabilities(
    beta: CoefficientMatrix | np.ndarray, X: np.ndarray, layout: CategoryLayout
) -> ConditionalProbabilities:
    """
    Marginals and conditionals of a bivariate model.

    Args:
        beta (CoefficientMatrix | np.ndarray): p x T coefficients.
        X (np.ndarray): n x p design.
        layout (CategoryLayout): A two-response layout.

    Raises:
        DomainError: If the layout does not have two responses.

    Returns:
        ConditionalProbabilities: The four arrays.
    """

    if layout.n_responses != 2:
        raise DomainError("Conditional probabilities need a bivariate layout", argument="layout", value=str(layout))
    joint = joint_to_array(layout, joint_probabilities(beta, X))  # n x J x K
    marginal_1 = joint.sum(axis=2)
    marginal_2 = joint.sum(axis=1)
    return ConditionalProbabilities(
        marginal_1=marginal_1,
        marginal_2=marginal_2,
        cond_2_given_1=joint / marginal_1[:, :, None],
        cond_1_given_2=joint / marginal_2[:, None, :],
    )


def penalty_value(
    beta: CoefficientMatrix | np.ndarray,
    design: OddsDesign,
    lam: float,
    gamma: float,
    penalty: PenaltyKind = "log_odds",
) -> float:
    """
    Penalty on rows 2..p.

    "log_odds" is lam * sum_m ||D'beta_m|| + gamma * sum_m ||beta_m||. "lasso" is gamma * sum |beta_mc| and ignores
    lam.

    Raises:
        DomainError: If the penalty kind is unknown.
    """

    rows = coefficient_values(beta)[1:]
    if penalty == "log_odds":
        return float(lam * log_odds_norms(design, rows).sum() + gamma * np.linalg.norm(rows, axis=1).sum())
    if penalty == "lasso":
        return float(gamma * np.abs(rows).sum())
    raise DomainError("Penalty must be 'log_odds' or 'lasso'", argument="penalty", value=penalty)


def objective(
    beta: CoefficientMatrix | np.ndarray,
    data: Dataset,
    design: OddsDesign,
    lam: float,
    gamma: float,
    kind: ObjectiveKind = "full",
    penalty: PenaltyKind = "log_odds",
) -> float:
    """Penalized objective, loss plus penalty_value."""
    return loss(beta, data, kind) + penalty_value(beta, design, lam, gamma, penalty)
