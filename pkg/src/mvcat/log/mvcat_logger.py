"""
Process-wide logger for mvcat.

The logger is created when this module is imported. Its level, destination and repeat suppression are read from
the environment (a .env file is honoured), so long tuning grids and simulation runs can be made quieter or routed
to a file without touching code.

Environment variables:
    MVCAT_LOG_NAME: Logger name. Defaults to "mvcat".
    MVCAT_LOG_LEVEL: DEBUG, INFO, WARNING, ERROR or CRITICAL. Defaults to INFO.
    MVCAT_LOG_OUTPUT: "console" or "file". Defaults to "console".
    MVCAT_LOG_FILE: Log file used when MVCAT_LOG_OUTPUT is "file". Defaults to "mvcat.log".
    MVCAT_LOG_MAX_REPETITIONS: Identical consecutive messages allowed before suppression. Defaults to 3.

Classes:
    SuppressRepeatFilter: A filter that collapses identical consecutive log messages.

Functions:
    setup_logger: Creates (once) and returns the global logger.
    get_logger: Returns the global logger, creating it if needed.
    set_default_handler: Replaces all handlers of the global logger.
    set_log_formatter: Sets the (colored) formatter on every stream handler.
    set_log_level: Sets the level of the global logger.
    set_temporary_level: Context manager that changes the level for a block.
    get_log_level: Returns the current level.
    get_log_level_name: Returns the current level name.
    set_output_to_console: Sends output to the console only.
    set_output_to_file: Sends output to a file only.
    add_output_to_file: Adds a file destination next to the current ones.
"""

import logging
import os
import sys
from contextlib import contextmanager
from typing import Iterator

import colorlog
from dotenv import load_dotenv

load_dotenv()

# Global logger instance, created by setup_logger()
logger: logging.Logger = None  # type: ignore

#######################
# Constants definitions
#######################

_VALID_LOG_LEVELS_DICT = {
    "NOTSET": logging.NOTSET,
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR,
    "CRITICAL": logging.CRITICAL,
}
_VALID_LOG_LEVELS = tuple(_VALID_LOG_LEVELS_DICT.values())

_LOG_COLORS = {"DEBUG": "cyan", "INFO": "green", "WARNING": "yellow", "ERROR": "red", "CRITICAL": "red,bg_white"}

_FORMAT_STR = "{levelname:8s} {module:20s}:{funcName:20s}:{lineno:4d} - {message}"
_FORMAT_COLOR_STR = "{log_color}{levelname:8s} {module:20s}:{funcName:20s}:{lineno:4d} - {reset}{message}"

_DEFAULT_LOG_NAME = "mvcat"
_DEFAULT_LOG_FILE = "mvcat.log"
_MAX_REPETITIONS = 3

#####################
# Classes definitions
#####################


class SuppressRepeatFilter(logging.Filter):
    """
    Collapses identical consecutive log messages.

    A message repeated more than max_repetitions times in a row is dropped; when a different message arrives, it
    is annotated with the number of suppressed repeats. Solver warnings emitted once per grid point are the main
    customer: a 375-point grid should not print 375 identical "did not converge" lines.

    Args:
        max_repetitions (int, optional): Repeats allowed before suppression. Defaults to MVCAT_LOG_MAX_REPETITIONS
            or 3.

    Raises:
        ValueError: If max_repetitions is less than 1.
    """

    def __init__(self, max_repetitions: int | None = None):
        super().__init__()
        self._last_message: object = None
        self._repeat_count = 0
        if max_repetitions is None:
            max_repetitions = int(os.getenv("MVCAT_LOG_MAX_REPETITIONS", _MAX_REPETITIONS))
        self.max_repetitions = max_repetitions

    def filter(self, record: logging.LogRecord) -> bool:
        if record.msg == self._last_message:
            self._repeat_count += 1
            return self._repeat_count < self._max_repetitions

        if self._repeat_count >= self._max_repetitions:
            suppressed = self._repeat_count - self._max_repetitions + 1
            record.msg = f"{record.msg} [previous message suppressed {suppressed} times]"
        self._last_message = record.msg
        self._repeat_count = 0
        return True

    @property
    def max_repetitions(self) -> int:
        return self._max_repetitions

    @max_repetitions.setter
    def max_repetitions(self, max_repetitions: int) -> None:
        if max_repetitions < 1:
            raise ValueError("Maximum repetitions must be a positive integer")
        self._max_repetitions = max_repetitions


######################
# Function definitions
######################


def setup_logger() -> logging.Logger:
    """
    Creates the global logger from the environment, or returns it if it already exists.

    Returns:
        logging.Logger: The global logger.
    """

    global logger

    if logger is not None:
        return logger

    logger = logging.getLogger(os.getenv("MVCAT_LOG_NAME", _DEFAULT_LOG_NAME))

    log_level = os.getenv("MVCAT_LOG_LEVEL", "INFO").upper()
    logger.setLevel(_VALID_LOG_LEVELS_DICT.get(log_level, logging.INFO))

    if os.getenv("MVCAT_LOG_OUTPUT", "console").lower() == "file":
        set_default_handler(logging.FileHandler(os.getenv("MVCAT_LOG_FILE", _DEFAULT_LOG_FILE)))
    else:
        set_default_handler(logging.StreamHandler(sys.stderr))

    set_log_formatter()

    return logger


def get_logger() -> logging.Logger:
    """Returns the global logger, creating it on first use."""
    return setup_logger()


def set_default_handler(handler: logging.Handler) -> None:
    """
    Replaces every handler of the global logger with the given one. A SuppressRepeatFilter is attached to it.

    Args:
        handler (logging.Handler): The new handler.
    """

    if logger is not None:
        logger.handlers.clear()
        handler.addFilter(SuppressRepeatFilter())
        logger.addHandler(handler)


def set_log_formatter(colorize: bool = True, log_colors: dict[str, str] = _LOG_COLORS) -> None:
    """
    Sets the formatter on every handler of the global logger.
    Colors are only applied to stream handlers; file handlers always get the plain format.

    Args:
        colorize (bool, optional): Whether to colorize console output. Defaults to True.
        log_colors (dict, optional): Level to color mapping. Defaults to _LOG_COLORS.
    """

    if logger is None:
        return

    plain = logging.Formatter(_FORMAT_STR, style="{")
    colored = colorlog.ColoredFormatter(_FORMAT_COLOR_STR, style="{", log_colors=log_colors)
    for handler in logger.handlers:
        # FileHandler is a StreamHandler subclass; keep escape codes out of files
        if isinstance(handler, logging.FileHandler) or not colorize:
            handler.setFormatter(plain)
        elif isinstance(handler, logging.StreamHandler):
            handler.setFormatter(colored)


def set_log_level(level: int | str) -> None:
    """
    Sets the level of the global logger.

    Args:
        level (int | str): A logging level number or name (case-insensitive).

    Raises:
        ValueError: If the level is not a valid logging level.
    """

    if logger is None:
        return
    if isinstance(level, str):
        if level.upper() not in _VALID_LOG_LEVELS_DICT:
            raise ValueError(f"'{level}' is not a valid logging level. Valid levels are {_VALID_LOG_LEVELS_DICT}")
        level = _VALID_LOG_LEVELS_DICT[level.upper()]
    if level not in _VALID_LOG_LEVELS:
        raise ValueError(f"'{level}' is not a valid logging level. Valid levels are {_VALID_LOG_LEVELS_DICT}")
    logger.setLevel(level)


@contextmanager
def set_temporary_level(new_level: int | str) -> Iterator[None]:
    """
    Changes the level of the global logger for the duration of a with block.

    Args:
        new_level (int | str): The temporary level.
    """

    old_level = logger.level
    set_log_level(new_level)
    try:
        yield
    finally:
        logger.setLevel(old_level)


def get_log_level() -> int | None:
    """Returns the level of the global logger, or None if it is not set up."""
    return logger.level if logger is not None else None


def get_log_level_name() -> str | None:
    """Returns the level name of the global logger, or None if it is not set up."""
    return logging.getLevelName(logger.level) if logger is not None else None


def set_output_to_console() -> None:
    """Sends the global logger's output to the console (stderr) only."""
    set_default_handler(logging.StreamHandler(sys.stderr))
    set_log_formatter()


def set_output_to_file(file_path: str, dont_create: bool = False) -> None:
    """
    Sends the global logger's output to a file only.

    Args:
        file_path (str): The log file.
        dont_create (bool, optional): If True, the file must already exist. Defaults to False.

    Raises:
        FileNotFoundError: If dont_create is True and the file does not exist.
    """

    if dont_create and not os.path.exists(file_path):
        raise FileNotFoundError(f"File '{file_path}' does not exist, and dont_create is True")
    set_default_handler(logging.FileHandler(file_path))
    set_log_formatter()


def add_output_to_file(file_path: str, dont_create: bool = False) -> None:
    """
    Adds a file destination to the global logger, keeping the existing ones.

    Args:
        file_path (str): The log file.
        dont_create (bool, optional): If True, the file must already exist. Defaults to False.

    Raises:
        FileNotFoundError: If dont_create is True and the file does not exist.
    """

    if dont_create and not os.path.exists(file_path):
        raise FileNotFoundError(f"File '{file_path}' does not exist, and dont_create is True")
    handler = logging.FileHandler(file_path)
    handler.setFormatter(logging.Formatter(_FORMAT_STR, style="{"))
    logger.addHandler(handler)


# Set up the logger immediately when the module is imported
setup_logger()
