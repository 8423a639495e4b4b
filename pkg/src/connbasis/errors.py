"""Exception types shared across the package.

The CLI maps ValidationError (and subclasses) to exit code 2 and
NumericalDivergenceError to exit code 3.
"""


class ValidationError(Exception):
    """Bad inputs: malformed files, violated preconditions, invalid config."""


class DimensionError(ValidationError):
    """Array shapes incompatible with the requested operation."""


class CheckpointError(ValidationError):
    """Unreadable, corrupted, or version-incompatible checkpoint file."""


class NumericalDivergenceError(Exception):
    """Optimization produced non-finite values or a runaway objective."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
