"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or parameter dimensions do not line up."""


class ContractError(ValueError):
    """A documented precondition was violated (empty input, non-scalar loss, ...)."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class FormatError(ValueError):
    """A serialized file has a bad magic number, version, or structure."""


class FileLengthError(FormatError):
    """A serialized file is shorter than its header promises."""


class SchemaError(ValueError):
    """A data record is missing required fields or has the wrong types."""


class DataError(ValueError):
    """Dataset content violates what the operation requires."""


class CompatibilityError(ValueError):
    """Checkpoint header does not match the active configuration."""
