"""Exception types raised across the package."""


class AiremlError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(AiremlError):
    """Array shapes are inconsistent with the declared model structure."""


class RankDeficientX(AiremlError):
    """Fixed-effects design matrix is not of full column rank."""


class NonPSDKernel(AiremlError):
    """A random-group kernel matrix fails the positive-semidefinite check."""


class SingularKernel(AiremlError):
    """An explicit kernel matrix is not invertible (strict PD required)."""


class InadmissibleTheta(AiremlError):
    """Variance parameters violate the admissibility constraints."""


class IndexOutOfRange(AiremlError, IndexError):
    """Variance-parameter index outside [0, m)."""


class FactorizationFailure(AiremlError):
    """A symmetric factorization failed (matrix numerically indefinite)."""


class SizeCapExceeded(AiremlError):
    """A dense desk-scale computation was requested above the size cap."""

    def __init__(self, n, cap, what="dense computation"):
        super().__init__(f"{what} requires n <= {cap}, got n = {n}")
        self.n = n
        self.cap = cap


class DegenerateResidual(AiremlError):
    """Residual sum of squares is numerically zero (response lies in the
    column span of the fixed-effects design); variance scale is not
    estimable."""


class ConfigError(AiremlError):
    """Run configuration is malformed or inconsistent with the dataset."""
