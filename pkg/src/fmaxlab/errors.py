"""Exception types raised across the package."""


class FmaxLabError(Exception):
    """Base class for all package errors."""


class AbsoluteContinuityViolation(FmaxLabError):
    """A divergence is infinite because one distribution has mass where the other has none.

    ``value`` carries the positive-infinity sentinel so callers that catch the
    error can still record a number.
    """

    def __init__(self, message: str, value: float = float("inf")):
        super().__init__(message)
        self.value = value


class DomainViolation(FmaxLabError):
    """A value lies outside the effective domain of a convex conjugate."""


class SingularSystem(FmaxLabError):
    """A linear flow system could not be solved."""


class NonConvergence(FmaxLabError):
    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DivergedParameters(FmaxLabError):
    """Parameters became non-finite after an update."""


class ShapeMismatch(FmaxLabError, ValueError):
    pass


class EmptyDemos(FmaxLabError, ValueError):
    pass


class ConfigError(FmaxLabError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class MissingRun(FmaxLabError):
    pass
