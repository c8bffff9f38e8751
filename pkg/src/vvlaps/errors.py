"""Exception types shared across the package.

The split matters for the CLI / service boundary: ConfigError maps to exit
code 2 (HTTP 400), everything else to exit code 3 (HTTP 500).
"""


class VvlapsError(Exception):
    """Base class for all package errors."""


class ConfigError(VvlapsError):
    """Bad configuration: unknown task/init, invalid hyperparameter, missing model file."""


class UsageError(VvlapsError):
    """API misuse: stepping a terminal state, empty batch, searching a terminal root."""


class DatasetParseError(VvlapsError):
    """Malformed dataset file. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BalanceError(VvlapsError):
    """Class balancing is impossible (no success examples at all)."""


class InvariantError(VvlapsError):
    """An internal invariant was violated; indicates a bug, not user error."""
