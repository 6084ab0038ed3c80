"""Exception types shared across the package."""


class VosMdmaError(Exception):
    """Base class for package-specific errors."""


class UnassignedQueryError(VosMdmaError):
    """A KPI was queried for a service not assigned to the given resource block.

    Raised instead of returning 0 so solver bookkeeping bugs surface early.
    """


class SingularFimError(VosMdmaError):
    """The Fisher information matrix is numerically singular."""

    def __init__(self, message, parameter=None):
        super().__init__(message)
        self.parameter = parameter


class InvalidSpecError(VosMdmaError, ValueError):
    """A KPI spec violates its preconditions (e.g. an uninvertible range threshold)."""


class SolverError(VosMdmaError):
    """An internal numerical solver failed; the message carries diagnostics."""


class AnchorInfeasibleError(SolverError):
    """The expansion point handed to the convex subproblem violates its own constraints."""


class ConstraintViolationError(VosMdmaError):
    """An assignment or power allocation violates the problem constraints."""


class StateBudgetError(VosMdmaError):
    """The dynamic program would exceed its configured state budget."""
