"""Exception taxonomy shared across the package.

All errors derive from :class:`GfmLabError` so callers can catch the whole
family; most also derive from a matching builtin (``ValueError`` or
``RuntimeError``) so they behave well in generic code.
"""


class GfmLabError(Exception):
    """Base class for all gfmlab errors."""


class ParameterError(GfmLabError, ValueError):
    """A physical or control parameter is outside its admissible domain."""


class ConfigError(GfmLabError, ValueError):
    """A run configuration (file or programmatic) is malformed."""


class VariantMismatchError(GfmLabError, ValueError):
    """A controller state bundle does not match the configured variant."""


class DegenerateVoltageError(GfmLabError, ArithmeticError):
    """A voltage-magnitude division guard tripped (|v| too close to zero)."""


class NoEquilibriumError(GfmLabError, RuntimeError):
    """The operating-point solver failed from every starting point."""


class NotAnEquilibriumError(GfmLabError, ValueError):
    """Linearization was requested at a point that is not an equilibrium."""


class NumericFailureError(GfmLabError, RuntimeError):
    """A numerical routine produced non-finite or unusable results."""


class InsufficientDataError(GfmLabError, ValueError):
    """A signal segment is too short for the requested analysis."""


class NoDominantModeError(GfmLabError, RuntimeError):
    """Ringdown fitting found no mode carrying a meaningful energy share."""


class NonProperWarning(UserWarning):
    """An improper transfer-function quotient was rolled off to make it proper."""
