"""
Joint-class indexing and the log odds ratio contrast matrix D.

A response vector (Y_1, ..., Y_G) with K_l categories per response is recoded as one joint class out of
T = K_1 * ... * K_G. Classes are numbered 1..T in mixed radix with the first response varying fastest, so for two
responses class (j, k) is (k - 1) * J + j.

The columns of D are all pairwise local log odds ratio contrasts: for responses a < b, categories j < j' of a,
k < k' of b, and a fixed configuration of every other response, the column has +1 at classes (j, k) and (j', k'),
and -1 at (j', k) and (j, k'). D'beta_m = 0 then says predictor m moves only the marginal distributions.

The proximal operator needs the spectral structure of D, which is computed once when the design is built and
cached on the (immutable) OddsDesign.

Classes:
    CategoryLayout: Category counts per response.
    OddsDesign: D with its spectral caches.
    CoefficientMatrix: A p x T coefficient matrix whose first row is the intercept.
    PredictorPartition: Predictors split into log odds, marginal-only and irrelevant sets.

Functions:
    coefficient_values(beta) -> np.ndarray
    class_index(layout, categories) -> int
    class_categories(layout, index) -> tuple[int, ...]
    class_table(layout) -> np.ndarray
    build_bivariate_design(J, K) -> OddsDesign
    build_multiresponse_design(cardinalities) -> OddsDesign
    build_design(layout) -> OddsDesign
    row_log_odds(design, beta_row) -> np.ndarray
    log_odds_norms(design, beta) -> np.ndarray
    classify_predictors(design, beta, tol) -> PredictorPartition
    joint_to_array(layout, P) -> np.ndarray
    marginal_probabilities(layout, P, response) -> np.ndarray
"""

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg

from mvcat.error.mvcat_error import DomainError
from mvcat.log.mvcat_logger import logger

#######################
# Constants definitions
#######################

# Relative eigenvalue cutoff used to decide the rank of D
_RANK_CUTOFF = 1e-10

# Default tolerance of classify_predictors
PARTITION_TOL = 1e-8


#######################
# Classes definitions
#######################


@dataclass(frozen=True)
class CategoryLayout:
    """
    Number of categories of each response.

    Args:
        cardinalities (tuple[int, ...]): (K_1, ..., K_G), every K_l >= 2.

    Raises:
        DomainError: If there is no response or some response has fewer than two categories.
    """

    cardinalities: tuple[int, ...]

    def __post_init__(self) -> None:
        cardinalities = tuple(int(k) for k in self.cardinalities)
        if len(cardinalities) == 0:
            raise DomainError("A layout needs at least one response", argument="cardinalities", value=cardinalities)
        for response, k in enumerate(cardinalities, start=1):
            if k < 2:
                raise DomainError(
                    f"Response {response} must have at least 2 categories", argument="cardinalities", value=k
                )
        object.__setattr__(self, "cardinalities", cardinalities)

    @property
    def n_responses(self) -> int:
        return len(self.cardinalities)

    @property
    def total_classes(self) -> int:
        return math.prod(self.cardinalities)

    @property
    def strides(self) -> tuple[int, ...]:
        """Mixed radix place values, stride_l = K_1 * ... * K_{l-1}."""
        strides, place = [], 1
        for k in self.cardinalities:
            strides.append(place)
            place *= k
        return tuple(strides)

    def __str__(self) -> str:
        return ",".join(str(k) for k in self.cardinalities)


@dataclass(frozen=True, eq=False)
class OddsDesign:
    """
    Log odds ratio contrast matrix and the cached quantities the prox operator needs.

    Attributes:
        layout (CategoryLayout): The response layout.
        D (np.ndarray): Integer matrix T x xi with entries in {-1, 0, 1}; every column sums to 0.
        labels (tuple[str, ...]): One label per column, e.g. "j1j2|k1k2".
        rank (int): Numerical rank r of D.
        nonzero_singular_sq (np.ndarray): The r nonzero squared singular values of D.
        left_vectors (np.ndarray): T x r orthonormal left singular vectors matching nonzero_singular_sq.
        proj_null (np.ndarray): T x T projector I - D(D'D)^- D' onto the orthogonal complement of range(D).
        pinv_map (np.ndarray): xi x T matrix (D'D)^- D'.
        equal_spectrum (bool): True if all nonzero squared singular values are equal (every bivariate design).
    """

    layout: CategoryLayout
    D: np.ndarray
    labels: tuple[str, ...]
    rank: int = field(init=False)
    nonzero_singular_sq: np.ndarray = field(init=False)
    left_vectors: np.ndarray = field(init=False)
    proj_null: np.ndarray = field(init=False)
    pinv_map: np.ndarray = field(init=False)
    equal_spectrum: bool = field(init=False)

    def __post_init__(self) -> None:
        D = np.asarray(self.D, dtype=np.int64)
        T = self.layout.total_classes
        if D.ndim != 2 or D.shape[0] != T:
            raise DomainError(f"D must have {T} rows", argument="D", value=D.shape)
        if len(self.labels) != D.shape[1]:
            raise DomainError("One label per column of D is required", argument="labels", value=len(self.labels))

        # eigh of the T x T Gram matrix DD' gives the left singular vectors directly
        eigenvalues, eigenvectors = scipy.linalg.eigh((D @ D.T).astype(float))
        keep = eigenvalues > _RANK_CUTOFF * max(eigenvalues.max(), 0.0)
        order = np.argsort(-eigenvalues[keep], kind="stable")
        s2 = eigenvalues[keep][order]
        U = eigenvectors[:, keep][:, order]

        proj_null = np.eye(T) - U @ U.T
        pinv_map = D.T @ (U / s2) @ U.T
        equal = bool(s2.size > 0 and s2.max() - s2.min() <= 1e-8 * s2.max())

        for array in (D, s2, U, proj_null, pinv_map):
            array.setflags(write=False)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "rank", int(s2.size))
        object.__setattr__(self, "nonzero_singular_sq", s2)
        object.__setattr__(self, "left_vectors", U)
        object.__setattr__(self, "proj_null", proj_null)
        object.__setattr__(self, "pinv_map", pinv_map)
        object.__setattr__(self, "equal_spectrum", equal)

        logger.debug(f"Built design for layout {self.layout}: {D.shape[1]} contrasts, rank {self.rank}")

    @property
    def n_contrasts(self) -> int:
        return int(self.D.shape[1])


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    """
    Coefficients beta in R^{p x T}; row 1 is the unpenalized intercept when has_intercept is True.

    Args:
        values (np.ndarray): The p x T matrix. It is copied and made read-only.
        layout (CategoryLayout): The response layout, T = layout.total_classes.
        has_intercept (bool, optional): Whether row 1 is the intercept. Defaults to True.

    Raises:
        DomainError: If the number of columns is not T.
    """

    values: np.ndarray
    layout: CategoryLayout
    has_intercept: bool = True

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.layout.total_classes:
            raise DomainError(
                f"Coefficients must have {self.layout.total_classes} columns", argument="values", value=values.shape
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, layout: CategoryLayout, n_predictors: int) -> "CoefficientMatrix":
        """All-zero coefficients for n_predictors rows (intercept included)."""
        return cls(np.zeros((n_predictors, layout.total_classes)), layout)

    @property
    def n_predictors(self) -> int:
        return int(self.values.shape[0])

    def recentered(self) -> "CoefficientMatrix":
        """Copy whose intercept row sums to zero. The fitted probabilities do not change."""
        values = self.values.copy()
        if self.has_intercept:
            values[0] -= values[0].mean()
        return CoefficientMatrix(values, self.layout, self.has_intercept)

    def row_centered(self) -> "CoefficientMatrix":
        """Copy with every row centered, the representative of beta modulo c1'."""
        centered = self.values - self.values.mean(axis=1, keepdims=True)
        return CoefficientMatrix(centered, self.layout, self.has_intercept)


@dataclass(frozen=True)
class PredictorPartition:
    """
    Predictors 2..p (1-based rows of beta) split by their effect.

    Attributes:
        log_odds (tuple[int, ...]): Rows with D'beta_m != 0, they change log odds ratios (and marginals).
        marginal (tuple[int, ...]): Nonzero rows with D'beta_m = 0, they change only the marginals.
        irrelevant (tuple[int, ...]): Zero rows.
    """

    log_odds: tuple[int, ...] = ()
    marginal: tuple[int, ...] = ()
    irrelevant: tuple[int, ...] = ()

    @property
    def selected(self) -> tuple[int, ...]:
        """Predictors with a nonzero row, in increasing order."""
        return tuple(sorted(self.log_odds + self.marginal))

    def as_dict(self) -> dict[str, list[int]]:
        return {"log_odds": list(self.log_odds), "marginal": list(self.marginal), "irrelevant": list(self.irrelevant)}


######################
# Function definitions
######################


def coefficient_values(beta: "CoefficientMatrix | np.ndarray") -> np.ndarray:
    """The p x T float array behind a CoefficientMatrix, or the array itself."""
    if isinstance(beta, CoefficientMatrix):
        return beta.values
    return np.asarray(beta, dtype=float)


def class_index(layout: CategoryLayout, categories: tuple[int, ...] | list[int]) -> int:
    """
    Joint class of a tuple of response categories.

    Args:
        layout (CategoryLayout): The layout.
        categories (tuple[int, ...]): 1-based category of every response.

    Raises:
        DomainError: If the tuple has the wrong length or a category is out of range. The message names the response.

    Returns:
        int: 1-based joint class, 1 + sum_l (c_l - 1) * K_1 * ... * K_{l-1}.

    Examples:
        >>> class_index(CategoryLayout((3, 2)), (3, 2))
        6
        >>> class_index(CategoryLayout((2, 2, 2)), (2, 1, 2))
        6
    """

    if len(categories) != layout.n_responses:
        raise DomainError(
            f"Expected {layout.n_responses} categories, got {len(categories)}", argument="categories", value=categories
        )
    index = 1
    for response, (c, k, stride) in enumerate(zip(categories, layout.cardinalities, layout.strides), start=1):
        if not 1 <= int(c) <= k:
            raise DomainError(f"Category of response {response} must be in 1..{k}", argument="categories", value=c)
        index += (int(c) - 1) * stride
    return index


def class_categories(layout: CategoryLayout, index: int) -> tuple[int, ...]:
    """
    Inverse of class_index.

    Raises:
        DomainError: If index is not in 1..T.
    """

    if not 1 <= int(index) <= layout.total_classes:
        raise DomainError(f"Joint class must be in 1..{layout.total_classes}", argument="index", value=index)
    remainder = int(index) - 1
    categories = []
    for k in layout.cardinalities:
        remainder, digit = divmod(remainder, k)
        categories.append(digit + 1)
    return tuple(categories)


def class_table(layout: CategoryLayout) -> np.ndarray:
    """T x G integer matrix whose row c - 1 holds class_categories(layout, c)."""
    return np.array([class_categories(layout, c) for c in range(1, layout.total_classes + 1)], dtype=np.int64)


def build_bivariate_design(J: int, K: int) -> OddsDesign:
    """
    Contrast matrix of all C(J,2) * C(K,2) local log odds ratios of a J x K table.

    Columns are ordered lexicographically by (j, j', k, k') with j < j' and k < k'.

    Args:
        J (int): Categories of the first response, at least 2.
        K (int): Categories of the second response, at least 2.

    Raises:
        DomainError: If J < 2 or K < 2.

    Returns:
        OddsDesign: The design. Its rank is (J-1)(K-1) and every nonzero squared singular value equals JK.

    Examples:
        >>> build_bivariate_design(2, 2).D[:, 0].tolist()
        [1, -1, -1, 1]
    """

    return _bivariate_design(int(J), int(K))


@lru_cache(maxsize=64)
def _bivariate_design(J: int, K: int) -> OddsDesign:
    layout = CategoryLayout((J, K))
    columns, labels = [], []
    for j, jp in itertools.combinations(range(1, J + 1), 2):
        for k, kp in itertools.combinations(range(1, K + 1), 2):
            column = np.zeros(J * K, dtype=np.int64)
            column[class_index(layout, (j, k)) - 1] += 1
            column[class_index(layout, (jp, kp)) - 1] += 1
            column[class_index(layout, (jp, k)) - 1] -= 1
            column[class_index(layout, (j, kp)) - 1] -= 1
            columns.append(column)
            labels.append(f"j{j}j{jp}|k{k}k{kp}")
    return OddsDesign(layout, np.column_stack(columns), tuple(labels))


def build_multiresponse_design(cardinalities: tuple[int, ...] | list[int]) -> OddsDesign:
    """
    Contrast matrix for G >= 2 responses.

    For every response pair a < b (in order), every j < j' of response a and k < k' of response b, and every
    configuration of the remaining responses (mixed radix, lowest response fastest), one column contrasts the four
    classes that differ only in responses a and b. For G = 2 this is exactly build_bivariate_design.

    Args:
        cardinalities (tuple[int, ...]): (K_1, ..., K_G).

    Raises:
        DomainError: If G < 2 or some K_l < 2.

    Returns:
        OddsDesign: The design, with xi = sum_{a<b} C(K_a,2) C(K_b,2) prod_{s != a,b} K_s columns and rank
        T - 1 - sum_l (K_l - 1).
    """

    cardinalities = tuple(int(k) for k in cardinalities)
    if len(cardinalities) < 2:
        raise DomainError("A design needs at least two responses", argument="cardinalities", value=cardinalities)
    layout = CategoryLayout(cardinalities)  # validates every K_l
    if len(cardinalities) == 2:
        return _bivariate_design(*cardinalities)
    return _multiresponse_design(layout.cardinalities)


@lru_cache(maxsize=64)
def _multiresponse_design(cardinalities: tuple[int, ...]) -> OddsDesign:
    layout = CategoryLayout(cardinalities)
    G = layout.n_responses
    columns, labels = [], []
    for a, b in itertools.combinations(range(G), 2):
        others = [l for l in range(G) if l not in (a, b)]
        # itertools.product varies its last factor fastest; reverse so the lowest other response is fastest
        other_configs = [
            tuple(reversed(config))
            for config in itertools.product(*(range(1, cardinalities[l] + 1) for l in reversed(others)))
        ]
        for j, jp in itertools.combinations(range(1, cardinalities[a] + 1), 2):
            for k, kp in itertools.combinations(range(1, cardinalities[b] + 1), 2):
                for config in other_configs:
                    column = np.zeros(layout.total_classes, dtype=np.int64)
                    for ca, cb, sign in ((j, k, 1), (jp, kp, 1), (jp, k, -1), (j, kp, -1)):
                        categories = [0] * G
                        categories[a], categories[b] = ca, cb
                        for l, c in zip(others, config):
                            categories[l] = c
                        column[class_index(layout, categories) - 1] += sign
                    columns.append(column)
                    fixed = "|".join(f"r{l + 1}={c}" for l, c in zip(others, config))
                    labels.append(f"r{a + 1}:{j}{jp}|r{b + 1}:{k}{kp}|{fixed}")
    return OddsDesign(layout, np.column_stack(columns), tuple(labels))


def build_design(layout: CategoryLayout) -> OddsDesign:
    """Design for any layout with at least two responses."""
    return build_multiresponse_design(layout.cardinalities)


def row_log_odds(design: OddsDesign, beta_row: np.ndarray) -> np.ndarray:
    """
    Log odds ratio contributions D'beta_m of one coefficient row.

    Args:
        design (OddsDesign): The design.
        beta_row (np.ndarray): Vector of length T.

    Raises:
        DomainError: If the length is not T.

    Returns:
        np.ndarray: Vector of length xi.

    Examples:
        >>> row_log_odds(build_bivariate_design(2, 2), np.array([1.0, -1.0, -1.0, 1.0])).tolist()
        [4.0]
    """

    beta_row = np.asarray(beta_row, dtype=float)
    if beta_row.shape != (design.layout.total_classes,):
        raise DomainError(
            f"Row must have length {design.layout.total_classes}", argument="beta_row", value=beta_row.shape
        )
    return design.D.T @ beta_row


def log_odds_norms(design: OddsDesign, beta: np.ndarray) -> np.ndarray:
    """Euclidean norm of D'beta_m for every row of a p x T matrix."""
    return np.linalg.norm(np.asarray(beta, dtype=float) @ design.D, axis=1)


def classify_predictors(
    design: OddsDesign, beta: CoefficientMatrix | np.ndarray, tol: float = PARTITION_TOL
) -> PredictorPartition:
    """
    Split predictors 2..p into log odds, marginal-only and irrelevant sets.

    Row m is irrelevant if ||beta_m|| <= tol, marginal-only if otherwise ||D'beta_m|| <= tol, and affects the log
    odds ratios otherwise. Indices are 1-based rows of beta; row 1 (the intercept) is never classified.

    Args:
        design (OddsDesign): The design.
        beta (CoefficientMatrix | np.ndarray): The p x T coefficients.
        tol (float, optional): Zero tolerance. Defaults to 1e-8.

    Raises:
        DomainError: If tol is not positive or the columns do not match the design.

    Returns:
        PredictorPartition: The partition.
    """

    if tol <= 0:
        raise DomainError("Tolerance must be positive", argument="tol", value=tol)
    values = coefficient_values(beta)
    if values.ndim != 2 or values.shape[1] != design.layout.total_classes:
        raise DomainError("Coefficients do not match the design", argument="beta", value=values.shape)

    rows = values[1:]
    row_norms = np.linalg.norm(rows, axis=1)
    odds_norms = log_odds_norms(design, rows)
    members = np.arange(2, values.shape[0] + 1)
    irrelevant = row_norms <= tol
    marginal = ~irrelevant & (odds_norms <= tol)
    log_odds = ~irrelevant & ~marginal
    return PredictorPartition(
        log_odds=tuple(int(m) for m in members[log_odds]),
        marginal=tuple(int(m) for m in members[marginal]),
        irrelevant=tuple(int(m) for m in members[irrelevant]),
    )


def joint_to_array(layout: CategoryLayout, P: np.ndarray) -> np.ndarray:
    """
    Reshape an n x T joint probability matrix to an array of shape (n, K_1, ..., K_G).

    Raises:
        DomainError: If P does not have T columns.
    """

    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[1] != layout.total_classes:
        raise DomainError(f"Expected {layout.total_classes} columns", argument="P", value=P.shape)
    G = layout.n_responses
    # first response varies fastest, so it is the last axis of a C-order reshape
    stacked = P.reshape((P.shape[0],) + tuple(reversed(layout.cardinalities)))
    return stacked.transpose([0] + list(range(G, 0, -1)))


def marginal_probabilities(layout: CategoryLayout, P: np.ndarray, response: int) -> np.ndarray:
    """
    Marginal distribution of one response, summing the joint over the others.

    Args:
        layout (CategoryLayout): The layout.
        P (np.ndarray): n x T joint probabilities.
        response (int): 1-based response index.

    Raises:
        DomainError: If the response index is out of range.

    Returns:
        np.ndarray: n x K_response matrix.
    """

    if not 1 <= int(response) <= layout.n_responses:
        raise DomainError(f"Response index must be in 1..{layout.n_responses}", argument="response", value=response)
    joint = joint_to_array(layout, P)
    other_axes = tuple(axis for axis in range(1, layout.n_responses + 1) if axis != response)
    return joint.sum(axis=other_axes)
