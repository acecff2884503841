class LabelsmithError(Exception):
    """Base class for toolkit errors."""


class ConfigError(LabelsmithError, ValueError):
    """Invalid parameters or configuration (CLI exit code 1)."""


class DataError(LabelsmithError, ValueError):
    """Malformed or inconsistent input data (CLI exit code 2)."""
