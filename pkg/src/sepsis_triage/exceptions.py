"""Exception hierarchy.

The CLI maps ``ConfigError`` to exit code 2 and ``DataError`` to exit code 3.
"""


class SepsisTriageError(Exception):
    """Base class for all package errors."""


class ConfigError(SepsisTriageError, ValueError):
    """Invalid configuration, parameters or command-line arguments."""


class DataError(SepsisTriageError, ValueError):
    """Input data cannot be used (malformed files, degenerate labels, ...)."""


class RecordParseError(DataError):
    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class RecordValidationError(DataError):
    def __init__(self, field, message, line_number=None):
        self.field = field
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{prefix}field {field!r}: {message}")


class VocabularyMismatchError(DataError):
    """Features were produced under a different vocabulary than the model's."""


class ConvergenceError(SepsisTriageError, ArithmeticError):
    """Newton iterations did not converge; ``last_iterate`` holds (slope, intercept)."""

    def __init__(self, message, last_iterate):
        self.last_iterate = last_iterate
        super().__init__(message)
