"""Shared exception types.

The CLI maps these onto exit codes: usage problems exit 1, data problems
(files, formats, labels, size limits) exit 2, numerical failures exit 3.
"""


class CycflowError(Exception):
    """Base class for pipeline errors."""


class InvalidInstanceError(CycflowError):
    pass


class InvalidTourError(CycflowError):
    pass


class DatasetFormatError(CycflowError):
    """Malformed dataset file; carries the 1-based offending line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class SizeLimitError(CycflowError):
    pass


class DegenerateInstanceError(CycflowError):
    pass


class MissingLabelsError(CycflowError):
    pass


class ConfigError(CycflowError):
    pass


class NumericalError(CycflowError):
    pass
