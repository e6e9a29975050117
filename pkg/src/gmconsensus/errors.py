"""Exception types raised across the package."""


class GMConsensusError(Exception):
    """Base class for all package errors."""


class DegenerateInputError(GMConsensusError, ValueError):
    """Input has no usable mass (zero total weight, empty group, ...)."""


class NumericalDegeneracyError(GMConsensusError, ArithmeticError):
    """A matrix that must be invertible or PSD is not."""


class DomainError(GMConsensusError, ValueError):
    """Argument outside the mathematical domain of the operation."""


class ConfigError(GMConsensusError, ValueError):
    """Invalid or inconsistent configuration."""


class InfeasibleTopologyError(GMConsensusError, RuntimeError):
    """Random network generation could not satisfy the requested topology."""
