"""Exception types raised by the pffa data model and solver."""


class PffaError(Exception):
    """Base class for all pffa errors."""


class CaseValidationError(PffaError, ValueError):
    """The network description is structurally invalid (missing slack,
    unresolvable bus reference, conflicting setpoints, ...)."""


class ParseError(CaseValidationError):
    """A case file could not be parsed."""


class IslandingError(PffaError):
    """A topology change splits the network into disconnected islands."""

    def __init__(self, message, islands=None):
        super().__init__(message)
        self.islands = islands or []


class SingularSystemError(PffaError):
    """The assembled linear system is singular or numerically singular.

    ``pivot_row`` is the offending row index in the assembled system and
    ``label`` the human-readable equation it belongs to (maps back to a bus,
    which is diagnostic near voltage collapse).
    """

    def __init__(self, message, pivot_row=None, label=None):
        super().__init__(message)
        self.pivot_row = pivot_row
        self.label = label


class ConvergenceError(PffaError):
    """Newton-Raphson or homotopy continuation failed to converge."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class VoltageFloorError(PffaError):
    """A bus voltage magnitude fell below the guard floor during iteration."""
