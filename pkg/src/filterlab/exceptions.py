"""Exception types raised across the package."""


class FilterLabError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(FilterLabError, ValueError):
    pass


class AllWeightsZero(FilterLabError, FloatingPointError):
    """Every weight underflowed to zero (degenerate likelihood)."""

    def __init__(self, message="all weights are zero", step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class SingularNoise(FilterLabError, ValueError):
    pass


class SingularInnovation(FilterLabError, ValueError):
    pass


class SupportTooLarge(FilterLabError, ValueError):
    pass


class NonFiniteState(FilterLabError, FloatingPointError):
    pass


class ZeroLikelihood(FilterLabError, ValueError):
    pass


class NotMonotone(FilterLabError, ValueError):
    pass


class InvalidModel(FilterLabError, ValueError):
    pass


class SandwichViolated(FilterLabError, AssertionError):
    def __init__(self, message, x=None, y=None):
        super().__init__(message)
        self.x = x
        self.y = y


class BoundViolated(FilterLabError, AssertionError):
    pass


class ConfigError(FilterLabError, ValueError):
    pass
