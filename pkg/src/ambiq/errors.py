"""Exception hierarchy shared by every module."""


class AmbiqError(Exception):
    """Base class for all package errors."""


class DomainError(AmbiqError, ValueError):
    """An argument lies outside the mathematical domain of an operation.

    ``boundary`` carries the violated limit when there is one.
    """

    def __init__(self, message, boundary=None):
        super().__init__(message)
        self.boundary = boundary


class UnsupportedError(AmbiqError, NotImplementedError):
    pass


class NotPositiveDefiniteError(AmbiqError, ValueError):
    pass


class InfeasibleError(AmbiqError):
    """The optimization problem has no solution for the given parameters.

    ``report`` holds whatever diagnostic record explains the failure
    (a threshold, a :class:`~ambiq.cco.FeasibilityReport`, a band).
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConvergenceError(AmbiqError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class HeavyTailError(AmbiqError):
    """Exponential moment of the payoff is not finite."""


class NoEquivalentError(InfeasibleError):
    """Calibration found no parameter value matching the target optimum."""
