"""Exception hierarchy shared by the solver modules."""


class BackwardRDError(Exception):
    """Base class for all errors raised by this package."""


class GridError(BackwardRDError, ValueError):
    """Rejected grid or field input (size, dimension, finiteness)."""


class DomainError(BackwardRDError, ValueError):
    """A nonlinearity was evaluated outside the range where it is defined."""


class ConfigurationError(BackwardRDError, ValueError):
    """Invalid parameters for a catalog law, plan or experiment."""


class InfeasibleError(BackwardRDError):
    """A parameter-choice rule has no admissible value for the given inputs."""


class OverflowGuardError(BackwardRDError, OverflowError):
    """An exponential weight would overflow double precision."""


class DivergenceError(BackwardRDError):
    """A fixed-point iteration stopped contracting."""


class BlowUpError(BackwardRDError):
    """The forward solution exceeded the blow-up threshold."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time
