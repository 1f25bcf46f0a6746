"""Exception hierarchy shared by every module of the package."""


class GmmKLError(Exception):
    """Base class for all package errors."""


class ValidationError(GmmKLError, ValueError):
    """An object violates its invariants (weights off the simplex, non-SPD covariance, ...)."""


class ParseError(GmmKLError, ValueError):
    """A mixture or certificate file could not be parsed.

    ``locus`` names the offending place, e.g. ``"line 3, column 7"`` or
    ``"components[2].cov"``.
    """

    def __init__(self, message, locus=None):
        self.locus = locus
        if locus is not None:
            message = f"{locus}: {message}"
        super().__init__(message)


class BudgetExceeded(GmmKLError, RuntimeError):
    """A quadrature tolerance could not be met within the panel budget."""


class TailEnvelopeMissing(GmmKLError, ValueError):
    """A density provides neither a tail envelope nor an analytic tail formula."""


class MomentDiverges(GmmKLError, ValueError):
    """The quadratic exponential moment is infinite at the requested t0."""


class DimensionMismatch(GmmKLError, ValueError):
    pass


class OverflowAtScale(GmmKLError, OverflowError):
    """An exact integer parameter does not fit in a signed 64-bit integer."""


class ScheduleInfeasible(GmmKLError, RuntimeError):
    """No radius in the search grid satisfies the five schedule conditions."""


class ToleranceUnreachable(GmmKLError, RuntimeError):
    """A constructive approximation missed its tolerance after the refinement cap.

    The best object found is kept in ``best`` and its measured error in
    ``achieved`` so that callers can decide whether to continue with it.
    """

    def __init__(self, message, best=None, achieved=None):
        super().__init__(message)
        self.best = best
        self.achieved = achieved


class InfimumTooSmall(GmmKLError, RuntimeError):
    """The grid infimum of the target on the ball is below floating resolution."""


class DivergentIntegrand(GmmKLError, ArithmeticError):
    """The positive part of a KL integrand does not converge under refinement."""
