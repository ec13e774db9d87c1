"""Exception types shared across the package."""


class SimulationError(Exception):
    """Base class for failures of the local solver or a scenario run."""


class SolverError(SimulationError):
    """An iterative solve did not converge.

    Carries the last residual seen by the iteration when available.
    """

    def __init__(self, message, last_residual=None):
        super().__init__(message)
        self.last_residual = last_residual


class StepSizeError(SolverError):
    """The requested increment is too large for the scheme; reduce dt."""


class DegenerateFlowError(SolverError):
    """Positive inelastic increment with a vanishing driving-force norm."""


class ScenarioError(SimulationError):
    """A scenario run failed; carries the time at which it failed."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class ConfigError(Exception):
    """Invalid or unparsable run configuration."""


class GridMismatchError(ValueError):
    """Histories cannot be compared because their time grids are incompatible."""
