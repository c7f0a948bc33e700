"""
File handling: dataset ingestion, expression preprocessing, feature screening and model files.

Datasets are two CSV files with a header row: predictors (one real column per predictor, no intercept) and responses
(one integer column per response, categories 1..K_l, "NA" or an empty cell where missing). Models are JSON documents
with a format version; only nonzero coefficient rows are stored.

Classes:
    SavedModel: A model read back from disk.

Functions:
    check_access(file_path, access_type) -> bool
    read_csv_table(path) -> tuple[list[str], list[list[str]]]
    load_predictors(path) -> tuple[list[str], np.ndarray]
    load_responses(path, layout) -> tuple[np.ndarray, CategoryLayout]
    load_dataset(x_path, y_path, layout, standardize, standardization) -> Dataset
    save_dataset_csv(data, x_path, y_path)
    load_counts(path) -> tuple[list[str], list[str], np.ndarray]
    expression_normalize(counts, min_q75, subject_names) -> tuple[np.ndarray, np.ndarray]
    anova_f_statistics(X, groups) -> tuple[np.ndarray, np.ndarray]
    screen_features(X, joint_classes, keep_top, max_abs_corr) -> list[int]
    save_model(path, beta, standardization, predictor_names, metadata)
    load_model(path) -> SavedModel
"""

import csv
import json
import math
import os
from typing import Any, NamedTuple

import numpy as np
from dotenv import load_dotenv

from mvcat.design.mvcat_design import CategoryLayout, CoefficientMatrix
from mvcat.error.mvcat_error import DataError, DomainError, ModelFormatError
from mvcat.likelihood.mvcat_likelihood import Dataset, Standardization, make_dataset
from mvcat.log.mvcat_logger import logger
from mvcat.string.mvcat_string import matrix_to_csv_str

load_dotenv()

#######################
# Constants definitions
#######################

MODEL_FORMAT_VERSION = 1
MISSING_TOKENS = frozenset({"", "NA"})
SUBJECT_COLUMN = "subject"
DEFAULT_MIN_Q75 = float(os.getenv("MVCAT_MIN_Q75", "20"))


#####################
# Classes definitions
#####################


class SavedModel(NamedTuple):
    """Coefficients, the standardization they expect, predictor names and free-form metadata."""

    beta: CoefficientMatrix
    standardization: Standardization
    predictor_names: tuple[str, ...]
    metadata: dict[str, Any]


######################
# Function definitions
######################


def check_access(file_path: str, access_type: str) -> bool:
    """
    Checks if a file has the specified access type.

    Args:
        file_path (str): The path to the file.
        access_type (str): "r" for reading, "w" for writing, "rw" for both.

    Returns:
        bool: True if the file has the specified access type, False otherwise.
    """
    try:
        if access_type == "r":
            return os.path.isfile(file_path) and os.access(file_path, os.R_OK)
        elif access_type == "w":
            return os.access(file_path, os.W_OK)
        elif access_type == "rw":
            return os.access(file_path, os.R_OK) and os.access(file_path, os.W_OK)
        else:
            return False
    except (PermissionError, FileNotFoundError):
        return False


def read_csv_table(path: str) -> tuple[list[str], list[list[str]]]:
    """
    Read a CSV file with a header row.

    Raises:
        DataError: If the file cannot be read, has no header, or a row has the wrong number of cells.

    Returns:
        tuple[list[str], list[list[str]]]: Header names and data rows as strings, whitespace stripped.
    """

    if not check_access(path, "r"):
        raise DataError("File doesn't exist or is not readable", path=path)
    with open(path, newline="") as handle:
        rows = [[cell.strip() for cell in row] for row in csv.reader(handle)]
    rows = [row for row in rows if any(row)]
    if not rows:
        raise DataError("Missing header row", path=path)
    header, body = rows[0], rows[1:]
    for number, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise DataError(f"Expected {len(header)} cells, found {len(row)}", path=path, row=number)
    return header, body


def load_predictors(path: str) -> tuple[list[str], np.ndarray]:
    """
    Read a predictor CSV.

    Raises:
        DataError: On a malformed or non-finite number, reporting its row and column.

    Returns:
        tuple[list[str], np.ndarray]: Column names and the n x (p - 1) matrix.
    """

    header, body = read_csv_table(path)
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(f"Malformed number {cell!r}", path=path, row=i + 1, column=header[j]) from None
            if not math.isfinite(values[i, j]):
                raise DataError(f"Non-finite predictor {cell!r}", path=path, row=i + 1, column=header[j])
    return header, values


def load_responses(path: str, layout: CategoryLayout | None = None) -> tuple[np.ndarray, CategoryLayout]:
    """
    Read a response CSV.

    Args:
        path (str): File path.
        layout (CategoryLayout, optional): Expected layout. Inferred from the largest category of every column when
            omitted.

    Raises:
        DataError: On a malformed or out-of-range category, a column count that does not match the layout, or a
            column that never shows more than one category when inferring.

    Returns:
        tuple[np.ndarray, CategoryLayout]: n x G categories (0 = missing) and the layout.
    """

    header, body = read_csv_table(path)
    if layout is not None and len(header) != layout.n_responses:
        raise DataError(f"Expected {layout.n_responses} response columns, found {len(header)}", path=path)
    categories = np.zeros((len(body), len(header)), dtype=np.int64)
    for i, row in enumerate(body):
        for j, cell in enumerate(row):
            if cell in MISSING_TOKENS:
                continue
            try:
                categories[i, j] = int(cell)
            except ValueError:
                raise DataError(f"Malformed category {cell!r}", path=path, row=i + 1, column=header[j]) from None
            upper = layout.cardinalities[j] if layout is not None else None
            if categories[i, j] < 1 or (upper is not None and categories[i, j] > upper):
                bound = f"1..{upper}" if upper is not None else "a positive integer"
                raise DataError(f"Category {cell} outside {bound}", path=path, row=i + 1, column=header[j])

    if layout is None:
        cardinalities = [int(categories[:, j].max(initial=0)) for j in range(len(header))]
        small = [header[j] for j, k in enumerate(cardinalities) if k < 2]
        if small:
            raise DataError(f"Cannot infer at least 2 categories for response column(s) {small}", path=path)
        try:
            layout = CategoryLayout(tuple(cardinalities))
        except DomainError as exc:
            raise DataError(str(exc), path=path) from exc
    return categories, layout


def load_dataset(
    x_path: str,
    y_path: str,
    layout: CategoryLayout | None = None,
    standardize: bool = True,
    standardization: Standardization | None = None,
) -> Dataset:
    """
    Build a Dataset from a predictor CSV and a response CSV.

    Rows with every response missing are dropped with a warning. The standardization is fitted on the rows kept,
    unless one is given (prediction and validation files reuse the training record).

    Args:
        x_path (str): Predictor CSV.
        y_path (str): Response CSV.
        layout (CategoryLayout, optional): Response layout. Inferred when omitted.
        standardize (bool, optional): Fit a standardization. Defaults to True.
        standardization (Standardization, optional): Record to apply instead.

    Raises:
        DataError: On parse errors, row count mismatch, fewer than 2 rows, constant columns or an empty dataset.

    Returns:
        Dataset: The dataset.
    """

    names, raw = load_predictors(x_path)
    categories, layout = load_responses(y_path, layout)
    if raw.shape[0] != categories.shape[0]:
        raise DataError(
            f"Predictor file has {raw.shape[0]} rows but response file '{y_path}' has {categories.shape[0]}",
            path=x_path,
        )
    if raw.shape[0] < 2:
        raise DataError("At least 2 rows are needed", path=x_path)
    data = make_dataset(raw, categories, layout, standardize, standardization, predictor_names=names)
    logger.info(f"Loaded {data.n} row(s), {data.p - 1} predictor(s), layout {layout} from '{x_path}', '{y_path}'")
    return data


def save_dataset_csv(data: Dataset, x_path: str, y_path: str) -> None:
    """Write the raw predictors and the categories ("NA" where missing) of a dataset in the ingestion format."""
    with open(x_path, "w") as output_file:
        output_file.write(matrix_to_csv_str(data.raw_predictors, list(data.predictor_names)))
    cells = np.where(data.categories > 0, data.categories.astype(str), "NA")
    with open(y_path, "w", newline="") as output_file:
        writer = csv.writer(output_file, lineterminator="\n")
        writer.writerow([f"y{g + 1}" for g in range(data.layout.n_responses)])
        writer.writerows(cells.tolist())


def load_counts(path: str) -> tuple[list[str], list[str], np.ndarray]:
    """
    Read a count table, one row per subject and one column per gene.

    A first column named "subject" holds subject identifiers; otherwise subjects are numbered from 1.

    Raises:
        DataError: On a count that is not a nonnegative number.

    Returns:
        tuple[list[str], list[str], np.ndarray]: Subject names, gene names and the counts.
    """

    header, body = read_csv_table(path)
    has_ids = bool(header) and header[0].lower() == SUBJECT_COLUMN
    first = 1 if has_ids else 0
    subjects = [row[0] for row in body] if has_ids else [str(i + 1) for i in range(len(body))]
    genes = header[first:]
    counts = np.empty((len(body), len(genes)))
    for i, row in enumerate(body):
        for j, cell in enumerate(row[first:]):
            try:
                counts[i, j] = float(cell)
            except ValueError:
                raise DataError(f"Malformed count {cell!r}", path=path, row=i + 1, column=genes[j]) from None
            if not counts[i, j] >= 0 or not math.isfinite(counts[i, j]):
                raise DataError(f"Counts must be finite and nonnegative, got {cell!r}", path=path, row=i + 1,
                                column=genes[j])
    return subjects, genes, counts


def expression_normalize(
    counts: np.ndarray, min_q75: float = DEFAULT_MIN_Q75, subject_names: list[str] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """
    Filter lowly expressed genes and log-transform counts by each subject's upper quartile.

    Genes whose 75th percentile count across subjects is below min_q75 are dropped. For the rest,
    x_ij = log((c_ij + 1) / q_i) where q_i is the 75th percentile of subject i's counts over the genes kept.

    Args:
        counts (np.ndarray): Subjects x genes nonnegative counts.
        min_q75 (float, optional): Gene filter threshold. Defaults to 20 (MVCAT_MIN_Q75).
        subject_names (list[str], optional): Names used in error messages.

    Raises:
        DomainError: If counts are negative or not a matrix.
        DataError: If no gene passes the filter, or a subject's upper quartile is 0.

    Returns:
        tuple[np.ndarray, np.ndarray]: Transformed matrix and the 0-based indices of the genes kept.

    Examples:
        A count of 0 for a subject whose upper quartile is 1 becomes log(1) = 0.
    """

    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 2 or counts.shape[0] < 1:
        raise DomainError("Counts must be a subjects x genes matrix", argument="counts", value=counts.shape)
    if (counts < 0).any():
        raise DomainError("Counts must be nonnegative", argument="counts")

    kept = np.flatnonzero(np.percentile(counts, 75, axis=0) >= min_q75)
    if kept.size == 0:
        raise DataError(f"No gene has a 75th percentile count of at least {min_q75}")
    dropped = counts.shape[1] - kept.size
    if dropped:
        logger.info(f"Dropped {dropped} gene(s) with 75th percentile count below {min_q75}")

    retained = counts[:, kept]
    q75 = np.percentile(retained, 75, axis=1)
    zero = np.flatnonzero(q75 <= 0)
    if zero.size:
        subject = subject_names[zero[0]] if subject_names else str(zero[0] + 1)
        raise DataError(f"Subject {subject} has a zero upper quartile count", row=int(zero[0]) + 1)
    return np.log((retained + 1.0) / q75[:, None]), kept


def anova_f_statistics(X: np.ndarray, groups: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    One-way ANOVA F statistic of every column of X over the given groups.

    Groups with fewer than 2 members are excluded with a warning. A column with no within-group variation gets
    F = inf when the group means differ and F = 0 when the column is constant.

    Args:
        X (np.ndarray): n x q matrix.
        groups (np.ndarray): n group labels.

    Raises:
        DomainError: If fewer than 2 groups have at least 2 members, or the lengths differ.

    Returns:
        tuple[np.ndarray, np.ndarray]: F statistics and between-group sums of squares, one per column.
    """

    X = np.asarray(X, dtype=float)
    groups = np.asarray(groups)
    if groups.shape[0] != X.shape[0]:
        raise DomainError("X and groups must have the same number of rows", argument="groups", value=groups.shape)

    labels, sizes = np.unique(groups, return_counts=True)
    small = labels[sizes < 2]
    if small.size:
        logger.warning(f"Excluded {small.size} group(s) with fewer than 2 members from the F statistics: {small}")
    labels = labels[sizes >= 2]
    if labels.size < 2:
        raise DomainError("F statistics need at least 2 groups with 2 or more members", argument="groups")

    rows = np.isin(groups, labels)
    X, groups = X[rows], groups[rows]
    grand_mean = X.mean(axis=0)
    between = np.zeros(X.shape[1])
    within = np.zeros(X.shape[1])
    for label in labels:
        members = X[groups == label]
        group_mean = members.mean(axis=0)
        between += members.shape[0] * (group_mean - grand_mean) ** 2
        within += ((members - group_mean) ** 2).sum(axis=0)

    df_between, df_within = labels.size - 1, X.shape[0] - labels.size
    with np.errstate(divide="ignore", invalid="ignore"):
        f_stats = (between / df_between) / (within / df_within)
    f_stats = np.where(within > 0, f_stats, np.where(between > 0, np.inf, 0.0))
    return f_stats, between


def screen_features(X: np.ndarray, joint_classes: np.ndarray, keep_top: int, max_abs_corr: float) -> list[int]:
    """
    Rank columns by their ANOVA F statistic over the joint classes, keep the top ones, then prune correlated ones.

    Columns are ordered by decreasing F, then decreasing between-group sum of squares, then index. Pruning walks
    that order and drops a column whose absolute correlation with an already kept column exceeds max_abs_corr.

    Args:
        X (np.ndarray): n x q candidate predictors.
        joint_classes (np.ndarray): n joint class labels.
        keep_top (int): Columns kept before pruning.
        max_abs_corr (float): Pruning threshold in (0, 1]; 1 keeps everything.

    Raises:
        DomainError: If keep_top < 1 or max_abs_corr is outside (0, 1].

    Returns:
        list[int]: 0-based indices of the selected columns, in ranking order.
    """

    if keep_top < 1:
        raise DomainError("keep_top must be at least 1", argument="keep_top", value=keep_top)
    if not 0.0 < max_abs_corr <= 1.0:
        raise DomainError("max_abs_corr must be in (0, 1]", argument="max_abs_corr", value=max_abs_corr)

    X = np.asarray(X, dtype=float)
    f_stats, between = anova_f_statistics(X, joint_classes)
    order = np.lexsort((np.arange(X.shape[1]), -between, -f_stats))[:keep_top]

    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.corrcoef(X[:, order], rowvar=False)
    corr = np.clip(np.nan_to_num(np.abs(np.atleast_2d(corr)), nan=0.0), 0.0, 1.0)
    kept: list[int] = []
    for position in range(order.size):
        if all(corr[position, other] <= max_abs_corr for other in kept):
            kept.append(position)
    logger.info(f"Screening kept {len(kept)} of {X.shape[1]} column(s)")
    return [int(order[position]) for position in kept]


def save_model(
    path: str,
    beta: CoefficientMatrix,
    standardization: Standardization,
    predictor_names: tuple[str, ...] | list[str] = (),
    metadata: dict[str, Any] | None = None,
) -> None:
    """
    Write a model as JSON.

    Only nonzero rows are stored, as (1-based row index, values). Floats keep their shortest round-trip
    representation, so a reloaded model predicts bit-identically.
    """

    values = beta.values
    document = {
        "format_version": MODEL_FORMAT_VERSION,
        "layout": list(beta.layout.cardinalities),
        "n_predictors": beta.n_predictors,
        "predictor_names": list(predictor_names),
        "standardization": standardization.as_dict(),
        "rows": [
            {"index": int(m) + 1, "values": [float(v) for v in values[m]]}
            for m in np.flatnonzero(np.any(values != 0, axis=1))
        ],
        "metadata": metadata or {},
    }
    with open(path, "w") as output_file:
        json.dump(document, output_file, indent=2)
    logger.info(f"Model saved to '{path}'")


def load_model(path: str) -> SavedModel:
    """
    Read a model written by save_model.

    Raises:
        ModelFormatError: If the file is missing, truncated, not a model, or has another format version.

    Returns:
        SavedModel: The model.
    """

    if not check_access(path, "r"):
        raise ModelFormatError("Model file doesn't exist or is not readable", path=path)
    try:
        with open(path) as input_file:
            document = json.load(input_file)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"Model file is not valid JSON ({exc})", path=path) from exc
    if not isinstance(document, dict) or "format_version" not in document:
        raise ModelFormatError("Model file has no format version", path=path)
    if document["format_version"] != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            "Unsupported model file", path=path, found_version=document["format_version"],
            expected_version=MODEL_FORMAT_VERSION,
        )

    try:
        layout = CategoryLayout(tuple(int(k) for k in document["layout"]))
        values = np.zeros((int(document["n_predictors"]), layout.total_classes))
        for row in document["rows"]:
            index = int(row["index"])
            if not 1 <= index <= values.shape[0]:
                raise ModelFormatError(f"Row index {index} is outside 1..{values.shape[0]}", path=path)
            values[index - 1] = np.asarray(row["values"], dtype=float)
        standardization = Standardization(
            np.asarray(document["standardization"]["center"], dtype=float),
            np.asarray(document["standardization"]["scale"], dtype=float),
        )
        names = tuple(str(name) for name in document["predictor_names"])
        metadata = dict(document.get("metadata", {}))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ModelFormatError(f"Model file is incomplete or corrupt ({exc!r})", path=path) from exc
    if standardization.n_columns != values.shape[0] - 1:
        raise ModelFormatError(
            f"Standardization has {standardization.n_columns} columns for {values.shape[0] - 1} predictors", path=path
        )
    return SavedModel(CoefficientMatrix(values, layout), standardization, names, metadata)
