"""Exception taxonomy shared by all modules.

The CLI maps these onto exit codes: precondition/guard/capacity/domain
failures exit 2, numeric failures exit 1.
"""


class CoalfluctError(Exception):
    """Base class for all package errors."""


class DomainError(CoalfluctError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class PreconditionError(CoalfluctError, ValueError):
    """A documented precondition of an operation is violated."""


class GuardError(PreconditionError):
    """A validity guard refused to run an experiment.

    Carries ``suggestion`` with the minimal adjustment that would pass.
    """

    def __init__(self, message, suggestion=None):
        super().__init__(message)
        self.suggestion = suggestion


class CapacityError(PreconditionError):
    """A size limit (block count, expected event count) was exceeded."""


class NumericError(CoalfluctError, RuntimeError):
    """A numerical routine failed to reach its accuracy target."""


class QuadratureError(NumericError):
    """Adaptive quadrature did not converge; carries the achieved error."""

    def __init__(self, message, achieved_error=None):
        super().__init__(message)
        self.achieved_error = achieved_error
