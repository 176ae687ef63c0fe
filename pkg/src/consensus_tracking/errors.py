"""Exception hierarchy.

CLI exit codes are keyed on the base classes here: ``ScenarioParseError`` and
usage problems map to 1, ``SolverError`` to 3, ``SimulationError`` to 4.
"""


class ConsensusTrackingError(Exception):
    """Base class for all package errors."""


class InvalidModel(ConsensusTrackingError, ValueError):
    """A model violates a structural or definiteness invariant."""


class DimensionMismatch(InvalidModel):
    pass


class UnknownNeighbor(InvalidModel):
    pass


class NegativeWeight(InvalidModel):
    pass


class SolverError(ConsensusTrackingError, ArithmeticError):
    """A matrix equation could not be solved."""


class NotSolvable(SolverError):
    """Stabilizability or detectability precondition of the Riccati equation fails."""


class NoConvergence(SolverError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ResonantSpectra(SolverError):
    """Sylvester equation is singular: an eigenvalue sum is (numerically) zero."""

    def __init__(self, message, min_gap=None):
        super().__init__(message)
        self.min_gap = min_gap


class SingularSystem(SolverError):
    pass


class NotDetectable(SolverError):
    pass


class NotInvertible(SolverError):
    pass


class SimulationError(ConsensusTrackingError):
    pass


class NonfiniteInput(SimulationError, ValueError):
    pass


class NonfiniteState(SimulationError):
    """Divergence guard tripped (non-finite entry or magnitude above 1e12)."""


class RequiresNoiseFree(SimulationError, ValueError):
    pass


class ScenarioParseError(ConsensusTrackingError):
    def __init__(self, message, line=None, column=None, path=None):
        self.line = line
        self.column = column
        self.path = path
        where = ""
        if line is not None:
            where = f" (line {line}, column {column})"
        super().__init__(f"{message}{where}")
