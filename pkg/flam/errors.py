"""Exception hierarchy for FLAM.

Every error carries the process exit code the CLI maps it to:
2 usage, 3 data / model file / I/O, 4 numeric failure.
"""


class FlamError(Exception):
    """Base class for all FLAM errors."""

    exit_code: int = 3

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class UsageError(FlamError):
    """Invalid command-line usage (bad flag combination, unknown scenario id)."""

    exit_code = 2


class InvalidArgumentError(FlamError, ValueError):
    """An argument violates an operation's domain."""

    exit_code = 3


class PreconditionError(InvalidArgumentError):
    """An input violates a documented precondition (e.g. non-centered theta)."""


class DataError(FlamError):
    """Input data cannot be ingested (missing cells, non-numeric columns)."""

    exit_code = 3


class ModelFormatError(FlamError):
    """A model file is malformed or carries an unknown format version."""

    exit_code = 3


class OutputError(FlamError):
    """An output file cannot be written."""

    exit_code = 3


class NumericFailureError(FlamError, ArithmeticError):
    """Non-finite objective, divergence or an unrecoverable singular system."""

    exit_code = 4
