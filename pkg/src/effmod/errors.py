"""Exception types shared across the package.

The CLI maps these onto exit codes, so raising the right class matters:
config/precondition problems exit 3, numerical failures exit 4.
"""


class PreconditionError(ValueError):
    """An operation was called with inputs that violate its contract."""


class ConfigError(ValueError):
    """A configuration (model spec, preset name, flag combination) is invalid."""


class NumericalError(ArithmeticError):
    """A numerical invariant failed: non-finite values, nondeterminism, a failed check."""
