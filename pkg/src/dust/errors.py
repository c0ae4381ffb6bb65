"""Exception types shared across the package."""


class DustError(Exception):
    """Base class for all package-specific failures."""


class DimensionError(DustError, ValueError):
    """Inconsistent matrix/vector dimensions in user input."""


class PersistencyError(DustError, ValueError):
    """A dataset failed the persistency-of-excitation precondition."""


class BoundUndefinedError(DustError, RuntimeError):
    """A diagnostic bound has a nonpositive denominator and is undefined."""


class StructureError(DustError, ValueError):
    """A matrix violated a required structural property (e.g. block triangularity)."""


class GainRecoveryError(DustError, RuntimeError):
    """Feedback-gain recovery failed at a specific step."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step
