"""
Console rendering for the command line utility.
Activates the rich traceback if the PYTHON_RICH_TRACEBACK environment variable is set.

Functions:
    to_jsonable: Convert numpy values inside a report to plain Python values.
    pretty_json: Return a pretty formatted JSON string.
    render_table: Return a plain text table.
"""

import json
import os
from typing import Any, Type

import numpy as np
from dotenv import load_dotenv
from pygments import highlight
from pygments.formatters.terminal import TerminalFormatter
from pygments.lexers import JsonLexer
from pygments.style import Style
from pygments.token import Keyword, Literal, Number, String
from rich.traceback import install
from tabulate import tabulate

load_dotenv()

# Enable rich traceback if PYTHON_RICH_TRACEBACK is set
if os.getenv("PYTHON_RICH_TRACEBACK"):
    install()


class DefaultJsonStyle(Style):
    styles = {
        Number: "ansiblue",
        String: "ansigreen",
        Keyword: "ansiyellow",
        Literal: "ansimagenta",
    }


def to_jsonable(data: Any) -> Any:
    """
    Recursively convert numpy arrays and scalars (and tuples) to lists, ints and floats.

    Args:
        data (Any): A report made of dicts, lists, tuples, numpy values and plain values.

    Returns:
        Any: The same structure with only JSON-native values.
    """

    if isinstance(data, dict):
        return {str(key): to_jsonable(value) for key, value in data.items()}
    if isinstance(data, (list, tuple)):
        return [to_jsonable(value) for value in data]
    if isinstance(data, np.ndarray):
        return to_jsonable(data.tolist())
    if isinstance(data, np.bool_):
        return bool(data)
    if isinstance(data, np.integer):
        return int(data)
    if isinstance(data, np.floating):
        return float(data)
    return data


def pretty_json(
    data: dict,
    indent: int = 4,
    colored: bool = True,
    style: Type[Style] = DefaultJsonStyle,
) -> str:
    """
    Return a pretty formatted JSON string.

    Args:
        data (dict): JSON data. Numpy values are converted first.
        indent (int): Indentation level, has to be between 2 and 8. Defaults to 4.
        colored (bool): Whether to colorize the JSON string. Defaults to True.
        style (Type[Style]): Custom style for colorizing the JSON string. Defaults to DefaultJsonStyle.

    Raises:
        ValueError: If indent is not between 2 and 8.

    Returns:
        str: Pretty formatted JSON string.
    """
    if not (2 <= indent <= 8):
        raise ValueError("Indent must be between 2 and 8.")

    formatted_json = json.dumps(to_jsonable(data), indent=indent)
    if colored:
        formatted_json = highlight(formatted_json, JsonLexer(), TerminalFormatter(style=style))

    return formatted_json


def render_table(rows: list[dict], float_format: str = ".4g", table_format: str = "simple") -> str:
    """
    Render a list of dictionaries as a text table, one column per key of the first row.

    Args:
        rows (list[dict]): The rows.
        float_format (str, optional): Format of float cells. Defaults to ".4g".
        table_format (str, optional): Any tabulate table format. Defaults to "simple".

    Returns:
        str: The table, or "(no rows)" if rows is empty.
    """

    if not rows:
        return "(no rows)"
    return tabulate(to_jsonable(rows), headers="keys", floatfmt=float_format, tablefmt=table_format)
