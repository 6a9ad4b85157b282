"""Exception types shared across the package.

The split mirrors the CLI exit-code contract: usage problems (bad flags,
malformed configuration) exit 1, data errors (unreadable or inconsistent
artifacts, contract violations on inputs) exit 2, and numerical failures
(divergent integrations, singular systems) exit 3.
"""

__all__ = ["UsageError", "DataError", "NumericalError", "NotFittedError"]


class UsageError(Exception):
    """Invalid command-line usage or malformed run configuration."""


class DataError(ValueError):
    """Input data violates a documented contract."""


class NumericalError(RuntimeError):
    """A numerical procedure failed or diverged."""


class NotFittedError(RuntimeError):
    """A model operation was requested before the model was fitted."""
