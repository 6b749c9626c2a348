"""Exception types shared across modules (mapped to CLI exit codes)."""

from .binio import FormatError


class ConfigError(ValueError):
    """Invalid or inconsistent user configuration."""


class DataError(Exception):
    """Input data that is well-formed on disk but unusable."""


class NumericAbort(RuntimeError):
    """A computation produced non-finite values."""

    def __init__(self, message: str, iteration: int | None = None, term: str | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.term = term


__all__ = ["ConfigError", "DataError", "FormatError", "NumericAbort"]
