"""Exception hierarchy shared by all modules."""


class StfeError(Exception):
    """Base class for simulator errors."""


class GridMismatchError(StfeError, ValueError):
    """Two objects live on incompatible discretizations."""


class ResolutionError(StfeError, ValueError):
    """Noise modes are not resolvable on the grid."""


class SolverFailure(StfeError, ArithmeticError):
    """A linear solve did not reach the requested residual."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class StepFailure(StfeError):
    """Adaptive stepping could not make progress (dt fell below dt_min).

    ``state`` holds the last accepted grid values, ``context`` a dict with
    whatever the raising code knew (time reached, dt, interval index...).
    """

    def __init__(self, message, state=None, **context):
        super().__init__(message)
        self.state = state
        self.context = context


class NumericalBlowup(StepFailure):
    """A NaN or Inf appeared in the state."""


class InfiniteEntropyError(StfeError, ValueError):
    """Entropy requested for a state with a nonpositive node."""


class ParameterError(StfeError, ValueError):
    """An invalid parameter value (e.g. reference level A <= max u)."""


class SamplingError(StfeError, LookupError):
    """A quantity was requested at a time that was not recorded."""


class EnsembleFailure(StfeError):
    """More than the tolerated fraction of sample paths failed."""

    def __init__(self, message, failures):
        super().__init__(message)
        self.failures = failures


class ConfigError(StfeError, ValueError):
    """Invalid run configuration; ``key`` and ``line`` locate the problem."""

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.key = key
        self.line = line
