"""Exception hierarchy. Every error carries the CLI exit code it maps to."""


class LambLocateError(Exception):
    exit_code = 2


class ConfigError(LambLocateError, ValueError):
    """Invalid argument or configuration (usage error)."""

    exit_code = 1


class UnsupportedOrderError(ConfigError):
    pass


class DataError(LambLocateError):
    """Problem with recorded or stored data."""

    exit_code = 2


class FormatError(DataError):
    """Bad magic, version, or truncated binary file."""


class CoverageError(DataError):
    """A requested time window is not covered by the recording."""


class NoOnsetError(DataError):
    """No sample exceeds the onset threshold."""


class InsufficientDataError(DataError):
    pass


class DimensionError(DataError):
    """Model and data dimensions disagree."""


class NumericError(LambLocateError, ArithmeticError):
    exit_code = 3


class DivergenceError(NumericError):
    """Training loss became non-finite. Holds the last good state."""

    def __init__(self, message, params=None, history=None):
        super().__init__(message)
        self.params = params
        self.history = history
