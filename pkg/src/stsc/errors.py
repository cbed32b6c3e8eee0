"""Exception taxonomy shared across the package.

Every error raised on a user-facing path derives from ``StscError`` so the
CLI can map failures to exit codes without matching on message text.
"""


class StscError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(StscError, ValueError):
    """A parameter or configuration value is invalid."""


class DimensionError(StscError, ValueError):
    """An array has the wrong rank or an incompatible shape."""


class BatchTooSmallError(DimensionError):
    """A training batch is too small for the requested operation."""


class StateError(StscError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward first)."""


class ParseError(StscError, ValueError):
    """An input file is malformed. Carries the 1-based line number."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}:"
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


class DuplicateRecordError(ParseError):
    """Two input rows describe the same logical record."""


class CoordinateError(ParseError):
    """A latitude or longitude lies outside its valid range."""


class NotFoundError(StscError, LookupError):
    """A referenced entity (sensor id, file key) does not exist."""


class InsufficientHistoryError(StscError, ValueError):
    """Not enough past data to assemble the requested sample or window."""


class DegenerateRangeError(ConfigError):
    """A normalization range has max equal to min."""


class EmptyInputError(StscError, ValueError):
    """An operation received an empty vector or dataset."""


class DivergenceError(StscError, RuntimeError):
    """Training produced a non-finite loss. Carries the 1-based epoch."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)


class CheckpointError(StscError, ValueError):
    """A checkpoint file is truncated, corrupt, or incompatible."""
