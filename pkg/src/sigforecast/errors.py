"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError and its
subclasses -> 2, NumericalError -> 3.
"""


class SigForecastError(Exception):
    """Base class for all package errors."""


class ConfigError(SigForecastError):
    """Invalid configuration or usage (bad key, out-of-range parameter)."""


class DataError(SigForecastError):
    """Problem with input data (format, shape, degenerate content)."""


class DataFormatError(DataError):
    """File does not parse or declared sizes are inconsistent."""


class ShapeError(DataError):
    """Mismatched array shapes or incompatible tensor layouts."""


class DegenerateWindowError(DataError):
    """Window too short or with (near-)constant channels."""


class ClassMissingError(DataError):
    """An operation required both classes but saw only one."""


class UndefinedAUCError(ClassMissingError):
    """AUC requested for a single-class label vector."""


class NumericalError(SigForecastError):
    """Non-finite values or failed numerical procedure."""
