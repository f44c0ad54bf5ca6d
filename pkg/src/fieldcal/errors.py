"""Exception hierarchy shared across the package.

The CLI maps each family onto its own exit code, so library code raises the
narrowest class that applies.
"""


class FieldcalError(Exception):
    """Base class for all package errors."""


class ConfigError(FieldcalError, ValueError):
    """Invalid configuration values or settings files."""


class SchemaError(FieldcalError, ValueError):
    """A dataset does not match its declared schema."""


class DataError(FieldcalError, ValueError):
    """Malformed input data (bad labels, non-finite values, empty sets)."""


class MetricError(DataError):
    """A metric is undefined for the given predictions (e.g. single-class AUC)."""


class TrainingError(FieldcalError, RuntimeError):
    """Model or calibrator fitting could not proceed."""
