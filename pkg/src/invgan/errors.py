"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad enum value, incompatible backbone, odd batch size."""


class IntegrityError(RuntimeError):
    """A checkpoint or data file failed validation; nothing was partially loaded."""


class UnsupportedOperationError(RuntimeError):
    """The requested operation is not defined for the active backbone."""
