"""
Exception hierarchy shared by every mvcat module.

Each exception stores the structured fields that describe the failure and builds its message from them in the
constructor, so callers (and tests) can inspect the fields instead of parsing text. Every exception carries the
process exit code the command line utility returns for it.

Classes:
    MvcatError: Base class of all mvcat errors.
    UsageError: Bad command line flags or malformed option values.
    DomainError: A library precondition was violated (bad layout, out-of-range category, shape mismatch).
    ContractViolationError: A likelihood was called on data it is not defined for.
    DataError: Input files could not be turned into a dataset.
    ModelFormatError: A model file is truncated, corrupt or written by an unsupported format version.
    NumericError: A computation produced non-finite values or the step size underflowed.
    OracleConvergenceError: The reference prox solver did not converge.
"""

#######################
# Constants definitions
#######################

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


############
# Exceptions
############


class MvcatError(Exception):
    """
    Base class of all mvcat errors.

    Attributes:
        message (str): The error message.
        exit_code (int): Exit code returned by the command line utility when this error escapes a command.
    """

    exit_code: int = 1

    def __init__(self, message: str = "mvcat error") -> None:
        self.message = message
        super().__init__(self.message)


class UsageError(MvcatError):
    """Raised for malformed command line options, e.g. a layout string like "3,x"."""

    exit_code = EXIT_USAGE


class DomainError(MvcatError, ValueError):
    """
    Raised when a library precondition is violated.

    Args:
        message (str): What went wrong.
        argument (str, optional): Name of the offending argument. Default is "".
        value (object, optional): The offending value. Default is None.
    """

    exit_code = EXIT_USAGE

    def __init__(self, message: str, argument: str = "", value: object = None) -> None:
        self.argument = argument
        self.value = value
        if argument:
            message = f"{message} (argument '{argument}'={value!r})"
        super().__init__(message)


class ContractViolationError(DomainError):
    """Raised when the full likelihood sees unobserved responses, or the observed one sees fully missing rows."""


class DataError(MvcatError):
    """
    Raised when input data cannot be ingested.

    Args:
        message (str): What went wrong.
        path (str, optional): File being read. Default is "".
        row (int, optional): 1-based data row (header excluded), 0 if not applicable. Default is 0.
        column (str | int, optional): Column name or 1-based index, "" if not applicable. Default is "".
    """

    exit_code = EXIT_DATA

    def __init__(self, message: str, path: str = "", row: int = 0, column: str | int = "") -> None:
        self.path = path
        self.row = row
        self.column = column
        location = []
        if path:
            location.append(f"file '{path}'")
        if row:
            location.append(f"row {row}")
        if column != "":
            location.append(f"column {column!r}")
        if location:
            message = f"{message} at {', '.join(location)}"
        super().__init__(message)


class ModelFormatError(DataError):
    """
    Raised when a model file cannot be loaded.

    Args:
        message (str): What went wrong.
        path (str, optional): Model file path. Default is "".
        found_version (int | None, optional): Version stored in the file, if any. Default is None.
        expected_version (int | None, optional): Version this build reads. Default is None.
    """

    def __init__(
        self,
        message: str,
        path: str = "",
        found_version: int | None = None,
        expected_version: int | None = None,
    ) -> None:
        self.found_version = found_version
        self.expected_version = expected_version
        if found_version is not None:
            message += f": found format version {found_version}, expected {expected_version}"
        super().__init__(message, path=path)


class NumericError(MvcatError, ArithmeticError):
    """
    Raised when a computation produces non-finite values.

    Args:
        message (str): What went wrong.
        row (int | None, optional): 0-based observation index where the problem was detected. Default is None.
        iteration (int | None, optional): Solver iteration where the problem was detected. Default is None.
        detail (str, optional): Extra diagnostic text, e.g. a summary of the offending iterate. Default is "".
    """

    exit_code = EXIT_NUMERIC

    def __init__(
        self, message: str, row: int | None = None, iteration: int | None = None, detail: str = ""
    ) -> None:
        self.row = row
        self.iteration = iteration
        self.detail = detail
        if row is not None:
            message += f" at observation {row}"
        if iteration is not None:
            message += f" at iteration {iteration}"
        if detail:
            message += f" [{detail}]"
        super().__init__(message)


class OracleConvergenceError(NumericError):
    """Raised when the reference prox solver does not reach its tolerance within the iteration budget."""
