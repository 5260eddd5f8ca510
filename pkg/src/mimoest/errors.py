"""Exception taxonomy for the workbench.

Everything raised on purpose derives from :class:`MimoestError`, so callers
(and the CLI) can distinguish expected failures from genuine bugs.
"""


class MimoestError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MimoestError, ValueError):
    """Operands have incompatible or invalid dimensions."""


class ParameterError(MimoestError, ValueError):
    """A configuration value or argument is out of its valid range."""


class SingularMatrixError(MimoestError, ArithmeticError):
    """Matrix is singular or numerically too close to singular to invert."""


class FactorizationError(MimoestError, ArithmeticError):
    """Cholesky factorization failed (input not Hermitian positive definite)."""


class IdentifiabilityError(MimoestError):
    """Pilot configuration cannot identify the channel (P < Nt or singular Gram)."""


class ConfigurationError(MimoestError):
    """An operation was invoked on an object missing required state."""


class DataError(MimoestError):
    """A dataset is empty, too small, or otherwise unusable."""


class FormatError(MimoestError):
    """A file does not conform to its expected binary or CSV layout."""


class CorruptionError(FormatError):
    """A file has the right magic/version but a truncated or damaged payload."""


class UndefinedMetricError(MimoestError):
    """A metric is undefined for the given input (e.g. zero reference energy)."""


class NumericalError(MimoestError, ArithmeticError):
    """Training or evaluation produced non-finite values (divergence)."""
