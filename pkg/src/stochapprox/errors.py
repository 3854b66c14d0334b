"""Exception types shared across the package."""


class StochApproxError(Exception):
    """Base class for all package errors."""


class SignViolation(StochApproxError, ValueError):
    """A sequence declared nonnegative produced a negative (or NaN) term."""

    def __init__(self, index, value, name=""):
        self.index = int(index)
        self.value = float(value)
        label = f" {name!r}" if name else ""
        super().__init__(f"sequence{label} violates nonnegativity at n={self.index}: {self.value!r}")


class MonotonicityError(StochApproxError, ValueError):
    """A sequence required to be non-increasing increased somewhere."""

    def __init__(self, index, message=""):
        self.index = int(index)
        super().__init__(message or f"sequence is not non-increasing at n={self.index}")


class PreconditionError(StochApproxError, ValueError):
    """An operation's documented precondition does not hold."""


class LengthMismatch(StochApproxError, ValueError):
    pass


class MeasurabilityError(StochApproxError, ValueError):
    pass


class RefinementError(StochApproxError, ValueError):
    pass


class SizeGuardError(StochApproxError, ValueError):
    """Requested exact product space exceeds the outcome cap."""


class ConfigError(StochApproxError, ValueError):
    """Malformed or inconsistent experiment configuration."""
