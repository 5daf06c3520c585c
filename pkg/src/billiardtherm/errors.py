"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, ConvergenceError -> 3,
everything else raised from a pipeline stage -> 4 (wrapped in StageError).
"""


class BilliardThermError(Exception):
    """Base class for all package errors."""


class ValidationError(BilliardThermError):
    """Invalid domain/geometry/config input; names the violated constraint."""


class ConfigError(BilliardThermError):
    """Bad configuration file or CLI flag combination."""


class MeshError(BilliardThermError):
    """Mesh generation produced an invalid triangulation."""


class AssemblyError(BilliardThermError):
    """Finite-element assembly failure (e.g. degenerate triangle)."""

    def __init__(self, message, triangle=None):
        super().__init__(message)
        self.triangle = triangle


class ConvergenceError(BilliardThermError):
    """Iterative solver or quadrature failed to reach its tolerance."""

    def __init__(self, message, converged=0, achieved=None):
        super().__init__(message)
        self.converged = converged
        self.achieved = achieved


class LevelMatchingError(BilliardThermError):
    """Eigenvalue branches could not be tracked across parameter samples."""


class FitRangeError(BilliardThermError):
    """Refusing a fit whose abscissa range is too narrow to be meaningful."""


class ThermoFilterError(BilliardThermError):
    """Sample filtering left an empty set; suggests relaxing thresholds."""


class StageError(BilliardThermError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage, original):
        super().__init__(f"stage '{stage}': {original}")
        self.stage = stage
        self.original = original
