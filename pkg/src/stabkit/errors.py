"""Exception hierarchy.  Each class maps to one CLI exit code."""


class StabkitError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class InputError(StabkitError, ValueError):
    """Bad user input: shapes, ranges, unparsable documents."""

    exit_code = 2


class DimensionError(InputError):
    pass


class ShapeError(InputError):
    pass


class DomainError(InputError):
    """A precondition of an operation is violated."""


class NumericalError(StabkitError):
    """A computation could not be carried out to the required accuracy."""

    exit_code = 3


class PrecisionError(NumericalError):
    pass


class InternalPositivityViolation(NumericalError):
    """A matrix that theory guarantees to be positive definite is not."""


class NotStabilizedAtRate(DomainError):
    def __init__(self, message, abscissa):
        super().__init__(message)
        self.abscissa = abscissa


class ConvergenceError(NumericalError):
    pass


class RateUnattainable(DomainError):
    """The requested decay rate is not below the best achievable rate."""

    def __init__(self, message, omega_star):
        super().__init__(message)
        self.omega_star = omega_star
