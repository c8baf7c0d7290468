"""Exception hierarchy shared by all modules."""


class GridAladinError(Exception):
    """Base class for all package errors."""


class PreconditionError(GridAladinError, ValueError):
    """Input violates a documented precondition."""


class InfeasibleQpError(GridAladinError):
    """The constraint polytope of a QP is empty."""


class QpNonConvergenceError(GridAladinError):
    """The active-set iteration cap was exceeded."""

    def __init__(self, message, iterations=None, working=None):
        super().__init__(message)
        self.iterations = iterations
        self.working = working


class RankDeficientError(GridAladinError, ValueError):
    """Equality constraint matrix does not have full row rank."""


class ProtocolError(GridAladinError):
    """Transport misuse: unknown endpoint or missing message."""


class AuditError(GridAladinError):
    """Communication ledger does not match the expected counts."""


class ScenarioLoadError(GridAladinError, ValueError):
    """Scenario configuration or CSV data is malformed."""
