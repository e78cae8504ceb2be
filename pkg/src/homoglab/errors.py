"""Exception hierarchy shared by all modules."""


class HomogLabError(Exception):
    """Base class for every error raised by homoglab."""


class InvalidDimension(HomogLabError, ValueError):
    pass


class InvalidSize(HomogLabError, ValueError):
    pass


class SymbolSingular(HomogLabError, ValueError):
    pass


class InvalidSpec(HomogLabError, ValueError):
    pass


class MismatchedGrids(HomogLabError, ValueError):
    pass


class GridMismatch(MismatchedGrids):
    pass


class NoConvergence(HomogLabError, RuntimeError):
    """Krylov iteration exhausted its budget.

    The best iterate and the residual history are attached so callers can
    inspect or salvage the partial solve.
    """

    def __init__(self, message, u=None, residual=None, iters=None, history=None):
        super().__init__(message)
        self.u = u
        self.residual = residual
        self.iters = iters
        self.history = history or []


class IllConditioned(HomogLabError, RuntimeError):
    """Non-positive curvature met inside CG, i.e. the operator is not elliptic."""


class DomainError(HomogLabError, ValueError):
    pass


class GeometryError(HomogLabError, ValueError):
    pass


class DegenerateSeries(HomogLabError, ValueError):
    pass


class ScaleTooSmall(HomogLabError, ValueError):
    pass


class SingularAhom(HomogLabError, ValueError):
    pass


class TooLarge(HomogLabError, ValueError):
    pass


class SingularSystem(HomogLabError, RuntimeError):
    pass


class ConfigError(HomogLabError):
    """Base for configuration problems (CLI exit code 64)."""


class ParseError(ConfigError):
    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field


class ValidationError(ConfigError):
    """Aggregated validation failures; ``errors`` holds every (field, message) pair."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{field}: {msg}" for field, msg in self.errors)
        super().__init__(f"{len(self.errors)} validation error(s): {lines}")


class CampaignFailed(HomogLabError, RuntimeError):
    """More than the tolerated fraction of samples failed (fail-hard)."""

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = list(failures or [])
