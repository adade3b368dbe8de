"""Exception types shared across the package."""


class GradBoundError(Exception):
    """Base class for all package errors."""


class InputDomainError(GradBoundError, ValueError):
    """An argument lies outside the domain of an operation (x outside box, t < 0)."""


class IntegrandRangeError(GradBoundError, OverflowError):
    """An integrand value is not representable in double precision."""


class ConvexityError(GradBoundError, ValueError):
    """A profile that must be convex in t was found to have g_tt < 0."""


class NumericError(GradBoundError, ArithmeticError):
    """A numerical procedure (quadrature, root bracketing) failed to converge."""


class LineSearchError(GradBoundError, RuntimeError):
    """The optimizer could not find an acceptable step.

    Attributes:
        field: last accepted iterate, as a node array.
        diagnosis: short human-readable explanation.
    """

    def __init__(self, message, field=None, diagnosis=""):
        super().__init__(message)
        self.field = field
        self.diagnosis = diagnosis


class InfeasibleExponentsError(GradBoundError, ValueError):
    """Exponent bookkeeping is infeasible for the requested operation."""
