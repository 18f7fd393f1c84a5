"""Exception types shared across the package."""


class DpacqError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DpacqError, ValueError):
    """Malformed input: bad schema, bad field value, or inconsistent agent data."""


class InfeasibleError(DpacqError):
    """The requested program has no feasible point.

    For fixed-eta privacy-constrained solves, ``bound`` carries the largest
    feasible eta (the sum of the thresholds).
    """

    def __init__(self, message: str, *, eta: float | None = None,
                 bound: float | None = None):
        super().__init__(message)
        self.eta = eta
        self.bound = bound


class InternalConsistencyError(DpacqError):
    """Structured solver and independent oracle disagree.

    This indicates a bug in one of the two and is surfaced, never swallowed.
    """


class OracleFailureError(DpacqError):
    """An iterative oracle failed to converge or was cancelled."""
