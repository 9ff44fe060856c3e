"""Exception types shared across the package."""


class CapprovError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(CapprovError, ValueError):
    """Bad input data, parameters or configuration (CLI exit code 2)."""


class InfeasibleError(CapprovError):
    """A planning or scaling problem has no valid solution (CLI exit code 1)."""

    def __init__(self, message: str, *, slot: int | None = None, policy: str | None = None):
        super().__init__(message)
        self.slot = slot
        self.policy = policy
