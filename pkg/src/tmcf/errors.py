"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class TmcfError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(TmcfError):
    """Invalid or inconsistent run configuration."""


class DataError(TmcfError):
    """Problem with input data (parsing or validation)."""


class ParseError(DataError):
    """Malformed input file; message carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(DataError):
    """Structurally parseable input that violates a data invariant."""


class NumericalError(TmcfError):
    """Non-finite values encountered during training or evaluation."""
