"""
String utilities for the CSV outputs and the command line options.

Functions:
    rows_to_csv_str(data: list[dict], field_names: list | None = None, column_headers: bool = True,
    delimiter: str = ",") -> str

    matrix_to_csv_str(matrix: np.ndarray, header: list[str], row_labels: list[str] | None = None,
    label_header: str = "") -> str

    format_float(value: float) -> str

    parse_layout(text: str) -> tuple[int, ...]

    parse_float_list(text: str) -> list[float]
"""

import csv
import io
import re

import numpy as np

from mvcat.error.mvcat_error import UsageError

_LAYOUT_RE = re.compile(r"^\s*\d+\s*(,\s*\d+\s*)+$")


def format_float(value: float) -> str:
    """
    Shortest string that parses back to the same double (Python's repr), so CSV outputs round-trip exactly.

    Args:
        value (float): Value to format.

    Returns:
        str: The formatted value.
    """
    return repr(float(value))


def rows_to_csv_str(
    data: list[dict],
    field_names: list | None = None,
    column_headers: bool = True,
    delimiter: str = ",",
) -> str:
    """
    Convert a list of dictionaries to a CSV string.
    Floats are written with format_float; other values with str().

    Args:
        data (list): List of dictionaries.
        field_names (list, optional): Column order. Defaults to the keys of the first dictionary.
        column_headers (bool, optional): Whether to include column headers. Defaults to True.
        delimiter (str, optional): Delimiter. Defaults to ",".

    Raises:
        ValueError: If data is empty and no field names are given.

    Returns:
        str: CSV string, "\\n" line endings.
    """

    if not field_names:
        if not data:
            raise ValueError("Cannot infer CSV columns from an empty row list")
        field_names = list(data[0].keys())

    output = io.StringIO()
    writer = csv.DictWriter(output, fieldnames=field_names, delimiter=delimiter, lineterminator="\n")
    if column_headers:
        writer.writeheader()
    for row in data:
        writer.writerow({key: format_float(v) if isinstance(v, (float, np.floating)) else v for key, v in row.items()})

    return output.getvalue()


def matrix_to_csv_str(
    matrix: np.ndarray, header: list[str], row_labels: list[str] | None = None, label_header: str = ""
) -> str:
    """
    Convert a 2-D array to a CSV string with a header row.

    Args:
        matrix (np.ndarray): The values. Integer arrays are written as integers.
        header (list[str]): Column names, one per matrix column.
        row_labels (list[str], optional): A leading label column. Defaults to None.
        label_header (str, optional): Header of the label column. Defaults to "".

    Raises:
        ValueError: If the header or labels do not match the matrix shape.

    Returns:
        str: CSV string.
    """

    matrix = np.atleast_2d(matrix)
    if len(header) != matrix.shape[1]:
        raise ValueError(f"Header has {len(header)} names for {matrix.shape[1]} columns")
    if row_labels is not None and len(row_labels) != matrix.shape[0]:
        raise ValueError(f"Got {len(row_labels)} row labels for {matrix.shape[0]} rows")

    is_integer = np.issubdtype(matrix.dtype, np.integer) or np.issubdtype(matrix.dtype, np.bool_)
    output = io.StringIO()
    writer = csv.writer(output, lineterminator="\n")
    writer.writerow(([label_header] if row_labels is not None else []) + list(header))
    for i, row in enumerate(matrix):
        cells = [str(int(v)) for v in row] if is_integer else [format_float(v) for v in row]
        writer.writerow(([row_labels[i]] if row_labels is not None else []) + cells)

    return output.getvalue()


def parse_layout(text: str) -> tuple[int, ...]:
    """
    Parse a layout option such as "3,2" or "2,2,2".

    Args:
        text (str): Comma separated category counts, at least two.

    Raises:
        UsageError: If the text is not a comma separated list of at least two integers.

    Returns:
        tuple[int, ...]: The category counts.

    Examples:
        >>> parse_layout("3, 2")
        (3, 2)
    """

    if not _LAYOUT_RE.match(text):
        raise UsageError(f"Invalid layout '{text}': expected comma separated category counts such as '3,2'")
    return tuple(int(part) for part in text.split(","))


def parse_float_list(text: str) -> list[float]:
    """
    Parse a comma separated list of floats, e.g. a grid given on the command line.

    Raises:
        UsageError: If any entry is not a number.
    """

    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise UsageError(f"Invalid number list '{text}': {exc}") from exc
