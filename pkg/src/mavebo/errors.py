"""Exception types raised across the package."""


class MaveBOError(Exception):
    """Base class for all package errors."""


class DimensionError(MaveBOError, ValueError):
    """Array shapes or dimensions are inconsistent."""


class DiagnosticUndefinedError(MaveBOError, ValueError):
    """A diagnostic quantity is undefined for the given inputs."""


class BandwidthTooSmallError(MaveBOError, ValueError):
    """Every kernel weight around an anchor vanished."""


class RankDeficiencyError(MaveBOError, ArithmeticError):
    """A local least-squares design is singular and no ridge was given."""


class InsufficientDataError(MaveBOError, ValueError):
    """Too few samples to estimate the requested number of directions."""


class IllConditionedError(MaveBOError, ArithmeticError):
    """Covariance factorization failed even after nugget escalation."""


class RunAborted(MaveBOError, RuntimeError):
    """An optimizer run failed part-way; the partial trace is attached.

    Attributes
    ----------
    trace : RunTrace
        Records collected before the failure.
    """

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace
