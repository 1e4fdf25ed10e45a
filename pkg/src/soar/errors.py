"""Exception hierarchy shared by every module of the package."""


class SoarError(Exception):
    """Base class for all package errors."""


class ContractError(SoarError, ValueError):
    """An argument violates a documented precondition (e.g. shape mismatch)."""


class DomainError(SoarError, ValueError):
    """A numeric argument lies outside the domain of the function."""


class ConfigError(SoarError):
    """Invalid configuration: unknown key, bad value, or violated constraint."""


class DecompositionError(SoarError):
    """The SVD backend failed to converge."""


class DivergenceError(SoarError):
    """An iterate became non-finite."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite iterate at step {step}")


class BreakdownError(SoarError):
    """CGNE breakdown: the search direction has zero curvature."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"CGNE breakdown at step {step}")


class FitError(SoarError):
    """Not enough usable points for a log-log rate fit."""
