"""Exception hierarchy shared across the package."""


class ThreshregError(Exception):
    """Base class for all package errors."""


class DomainError(ThreshregError, ArithmeticError):
    """A linear predictor left the numerically representable domain of a family."""


class DimensionError(ThreshregError, ValueError):
    pass


class SupportError(ThreshregError, ValueError):
    """Response values lie outside the support of the requested family."""


class DataError(ThreshregError, ValueError):
    """Malformed input data (parse failures, missing columns, zero columns)."""


class GuardError(ThreshregError, ValueError):
    """An enumeration budget guard was violated."""


class SeparationError(ThreshregError):
    """Logistic likelihood has no finite maximiser (perfect separation)."""


class RankDeficiencyError(ThreshregError, ValueError):
    pass


class SolverError(ThreshregError):
    """Hard solver failure (all starts diverged, all grid fits failed, ...)."""
