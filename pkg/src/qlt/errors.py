"""Exception types raised across the package."""


class QLTError(Exception):
    """Base class for all package errors."""


class DimensionError(QLTError, ValueError):
    """Operands have incompatible or malformed shapes."""


class MalformedVectorError(DimensionError):
    """A vectorized operator does not have a perfect-square length."""


class NotPositiveError(QLTError, ValueError):
    """A matrix expected to be positive semidefinite has a significantly negative eigenvalue."""


class NonFiniteError(QLTError, ValueError):
    """Input contains NaN or infinite entries."""


class ModelViolationError(QLTError):
    """Predicted probabilities fall outside [0, 1] by more than numerical noise."""


class SingularMapError(QLTError):
    """A dynamical map is too ill-conditioned to invert."""


class ParameterError(QLTError, ValueError):
    """An unconstrained parameter matrix cannot be mapped (zero or rank deficient)."""


class DatasetError(QLTError, ValueError):
    """A dataset is empty, of the wrong kind, or inconsistent with another one."""


class NotLindbladError(QLTError):
    """A superoperator cannot be written in the canonical generator form."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class FitDivergenceError(QLTError):
    """The optimizer produced a non-finite loss."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
