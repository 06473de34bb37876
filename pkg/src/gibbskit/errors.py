"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`GibbsKitError`.  The CLI maps the configuration family to exit code 2
and the numerical family to exit code 3.
"""


class GibbsKitError(Exception):
    """Base class for all package errors."""


class ConfigError(GibbsKitError, ValueError):
    """Invalid parameters (range, consistency, sizes)."""


class DimensionError(ConfigError):
    """Arrays whose shapes do not agree with the block structure."""


class InputError(ConfigError):
    """Non-finite or otherwise malformed input values."""


class ConstructionError(ConfigError):
    """A target could not be built (e.g. precision matrix not SPD)."""


class UnsupportedError(GibbsKitError):
    """A combination of target and operation that is not implemented."""


class NumericalError(GibbsKitError, ArithmeticError):
    """Singular matrices, NaN log-ratios and similar numerical failures."""


class ConditionalSamplingError(NumericalError):
    """Exact sampling from a full conditional failed."""


class HullViolationError(ConditionalSamplingError):
    """A log-density evaluation exceeded the rejection hull (not log-concave)."""


class BracketError(ConditionalSamplingError):
    """The mode of a one-dimensional density could not be bracketed."""


class ModeError(NumericalError):
    """Conditional mode finding failed."""


class DomainError(NumericalError):
    """Probability mass leaks outside of a finite evaluation box."""
