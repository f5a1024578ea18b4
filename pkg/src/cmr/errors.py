"""Exception types shared across the package."""


class CmrError(Exception):
    """Base class for package-specific errors."""


class DimensionError(CmrError):
    """Operand shapes are incompatible with an operation's contract."""


class NumericError(CmrError):
    """Non-finite values appeared where finite ones are required."""


class ContractError(CmrError):
    """A documented precondition was violated by the caller."""


class ConfigError(CmrError):
    """Invalid network, data, or training configuration."""


class UninitializedStatsError(CmrError):
    """Inference-mode batch norm was asked to run before any training batch."""
