"""Exception types shared across the package."""


class MCCError(Exception):
    """Base class for all package errors."""


class DimensionError(MCCError, ValueError):
    """Operand shapes do not conform."""


class ParameterError(MCCError, ValueError):
    """A scalar or set-valued parameter is outside its valid range."""


class ContractError(MCCError, ValueError):
    """A documented precondition on the inputs was violated."""


class ConfigError(MCCError, ValueError):
    """A run configuration could not be parsed or validated."""


class TrainingError(MCCError, RuntimeError):
    """Training diverged or otherwise could not continue."""
