"""Exception types raised across the package."""


class CrossNetError(Exception):
    """Base class for all package errors."""


class DimensionError(CrossNetError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(CrossNetError, ValueError):
    """A configuration value violates a structural constraint."""


class ContractError(CrossNetError, ValueError):
    """A precondition of an operation does not hold."""


class DegenerateInputError(CrossNetError, ValueError):
    """Input carries no usable energy (e.g. an all-zero reference)."""


class FormatError(CrossNetError, ValueError):
    """A binary or JSON file is malformed."""


class TrainingError(CrossNetError, RuntimeError):
    """Training diverged."""
