"""Exception types raised across the package."""


class NNControlError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NNControlError, ValueError):
    """Invalid parameters, shapes or cross-field settings."""


class DomainViolationError(NNControlError):
    """A policy produced a control outside the declared control set."""


class DivergenceError(NNControlError):
    """Non-finite loss or gradient during gradient descent."""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss, gradient or parameters at iteration {iteration}")


class ConditioningError(NNControlError):
    """Numerically singular system (e.g. Riccati step) or non-finite simulated cost."""


class DegenerateGridError(NNControlError):
    """Quantization grid collapsed onto repeated points."""
