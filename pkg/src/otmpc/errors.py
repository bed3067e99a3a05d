"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input lies outside the mathematical domain of an operation."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class SolverFailureError(RuntimeError):
    """The transport solver cannot proceed (e.g. kernel underflow)."""


class DegenerateCouplingError(RuntimeError):
    """A coupling row carries (numerically) zero mass."""

    def __init__(self, row: int, mass: float):
        self.row = row
        self.mass = mass
        super().__init__(f"coupling row {row} has total mass {mass:.3e} (< 1e-15); "
                         "barycentric weights are undefined")


class UndefinedMeanError(RuntimeError):
    """Circular mean resultant vanished; the mean angle is undefined."""


class BranchAmbiguityError(DomainError):
    """Rotation angle at or beyond pi: the matrix logarithm branch is ambiguous."""


class NearSingularError(DomainError):
    """Matrix eigenvalue too close to zero for a stable logarithm."""


class EnvironmentFaultError(RuntimeError):
    """Dynamics produced a non-finite state."""

    def __init__(self, timestep: int, detail: str = ""):
        self.timestep = timestep
        msg = f"non-finite state at timestep {timestep}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class FieldGenerationError(RuntimeError):
    """Obstacle-field rejection sampling exhausted its attempt budget."""
