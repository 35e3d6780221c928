"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class AssemblyError(RuntimeError):
    """A step system could not be assembled (e.g. fully degenerate conductivity)."""


class StepError(RuntimeError):
    """A time step failed; carries the solver statistics of the failing solve."""

    def __init__(self, message, stats=None, step=None, trajectory=None):
        super().__init__(message)
        self.stats = stats
        self.step = step
        self.trajectory = trajectory


class ConfigError(ValueError):
    """Malformed run configuration. ``line`` and ``key`` locate the problem."""

    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key
