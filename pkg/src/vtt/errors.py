"""Exception types shared across the package.

Validation/config errors map to CLI exit code 2, everything else to 1.
"""


class VttError(Exception):
    pass


class ShapeError(VttError, ValueError):
    """Operands have incompatible shapes."""


class ValidationError(VttError, ValueError):
    """Input values violate a documented precondition."""


class ConfigError(VttError, ValueError):
    """Configuration is malformed or inconsistent."""


class UsageError(VttError, RuntimeError):
    """An API was called in an unsupported way (e.g. backward on a non-scalar)."""
