"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`LinpoolError`.
The CLI maps each family to an exit code via ``exit_code``.
"""


class LinpoolError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(LinpoolError, ValueError):
    """Malformed or schema-violating configuration."""

    exit_code = 2


class DataError(LinpoolError, ValueError):
    """Problems with input data (shape, content, file format)."""

    exit_code = 3


class InvalidModelError(DataError):
    """Covariance model or law parameters outside their admissible range."""


class InsufficientDataError(DataError):
    """Too few observations for the requested statistic."""


class ShapeError(DataError):
    """Dimension mismatch between inputs."""


class NumericalError(LinpoolError, ArithmeticError):
    """Numerical failure (non-convexity, infeasibility, singularity)."""

    exit_code = 4


class NotStrictlyConvexError(NumericalError):
    """Quadratic term of a QP is not positive definite."""


class InfeasibleError(NumericalError):
    """Constraint set is empty."""


class ConditioningError(NumericalError):
    """A linear system is singular even after damping."""


class UnsupportedClosedFormError(LinpoolError, NotImplementedError):
    """No closed-form value is available for the requested model."""
