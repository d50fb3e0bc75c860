"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Misaligned, non-contained, or non-tileable perforation geometry."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class AssemblyError(RuntimeError):
    """An assembled effective tensor failed its consistency checks."""


class DegeneracyError(ValueError):
    """The requested problem is degenerate (e.g. no perforation, no no-slip surface)."""


class StateError(ValueError):
    """A simulation state violates an invariant that should be unreachable."""
