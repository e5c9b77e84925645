"""Exception types shared across the package."""


class NanomtError(Exception):
    """Base class for all package errors."""


class InvalidInputError(NanomtError, ValueError):
    """An operation received a value that violates its preconditions."""


class ConfigError(NanomtError, ValueError):
    """A configuration value or combination of values is not usable."""


class TrainingError(NanomtError, RuntimeError):
    """Training cannot continue (for example a NaN gradient)."""
