"""Exception hierarchy shared across the package."""


class GpalError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(GpalError, ValueError):
    pass


class NonFiniteValue(GpalError, ValueError):
    pass


class MeanInconsistent(GpalError, ValueError):
    """Stored sample means disagree with the replicate responses."""


class OutOfBounds(GpalError, ValueError):
    pass


class NotPositiveDefinite(GpalError, ArithmeticError):
    """Cholesky factorization failed even after the maximum diagonal jitter."""


class RankDeficientDesign(GpalError, ArithmeticError):
    pass


class UnknownParameter(GpalError, KeyError):
    pass


class OptimizationFailed(GpalError, RuntimeError):
    pass


class SingularInformation(GpalError, ArithmeticError):
    pass


class EmptyPool(GpalError, ValueError):
    pass


class FoldFitFailed(GpalError, RuntimeError):
    def __init__(self, fold: int, cause: Exception):
        super().__init__(f"fold {fold} failed: {cause}")
        self.fold = fold
        self.cause = cause


class ConfigError(GpalError, ValueError):
    pass
