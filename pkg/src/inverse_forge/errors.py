"""Exception hierarchy shared across the package.

Usage errors (bad flags, malformed config) map to exit code 1 in the CLI;
data and contract violations map to exit code 2.
"""


class InverseForgeError(Exception):
    """Base class for all package errors."""


class DimensionError(InverseForgeError):
    """Shapes or lengths of two operands do not agree."""


class DomainError(InverseForgeError):
    """A value is outside the mathematical domain of an operation."""


class ContractError(InverseForgeError):
    """A caller violated a documented precondition."""


class NumericError(InverseForgeError):
    """NaN or infinity appeared where a finite value is required."""


class ConfigError(InverseForgeError):
    """Invalid configuration value."""


class VersionError(InverseForgeError):
    """File format version does not match this package."""


class IntegrityError(InverseForgeError):
    """A file is truncated or fails its checksum."""
