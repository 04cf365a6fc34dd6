class LevyFdtError(Exception):
    """Base class for toolkit errors; exit_code is what the CLI returns."""

    exit_code = 3


class ConfigError(LevyFdtError):
    exit_code = 2


class InvalidParameterError(LevyFdtError, ValueError):
    exit_code = 2


class UnsupportedDimensionError(LevyFdtError):
    exit_code = 2


class AssumptionViolationError(LevyFdtError):
    """sigma(x) is not invertible at a probe point."""


class EnsembleDivergenceError(LevyFdtError):
    pass


class StabilityError(LevyFdtError):
    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class BoundaryMassError(LevyFdtError):
    pass


class ConvergenceError(LevyFdtError):
    pass


class CompatibilityError(LevyFdtError):
    pass


class SingularSystemError(LevyFdtError):
    pass


class FloorDominatedError(LevyFdtError):
    pass


class VerificationFailed(LevyFdtError):
    exit_code = 1


class AliasingWarning(UserWarning):
    pass


class ReliabilityWarning(UserWarning):
    pass
