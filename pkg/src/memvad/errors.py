"""Exception hierarchy shared across the package.

Every error raised by memvad derives from :class:`MemvadError`, so the CLI
can map any failure to a single machine-parsable line.
"""


class MemvadError(Exception):
    """Base class for all memvad errors."""


class FeatureFormatError(MemvadError):
    """File is not an OMF1 feature file (bad magic or version)."""


class CorruptFileError(MemvadError):
    """Header and payload disagree: truncated records or trailing bytes."""


class FeatureValidationError(MemvadError):
    """Feature or ground-truth data violates a declared invariant."""


class CheckpointError(MemvadError):
    """Checkpoint file is malformed or truncated."""


class ConfigError(MemvadError):
    """Invalid configuration value."""


class DimensionError(MemvadError):
    """Input dimensions do not match the network specification."""


class NumericError(MemvadError):
    """Non-finite value or linear-algebra failure during computation."""


class UndefinedMetricError(MemvadError):
    """Metric undefined for the given inputs (e.g. single-class labels)."""
