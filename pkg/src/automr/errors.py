"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError, DataError, CheckpointError
and StoreError are validated-input failures (exit 2); AnomalyError and
unexpected I/O problems are runtime failures (exit 3).
"""


class AutoMRError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(AutoMRError):
    """Invalid model, training, schema or search-space configuration."""


class DataError(AutoMRError):
    """Malformed input data, or data that violates its declared schema."""


class ShapeError(AutoMRError):
    """Array shape disagreement; the message names the offending dimension."""


class CheckpointError(AutoMRError):
    """Checkpoint file that is unreadable, corrupt or inconsistent."""


class StoreError(AutoMRError):
    """Trial store that is unreadable or inconsistent with the study."""


class AnomalyError(AutoMRError):
    """Non-finite loss or gradients that the recovery policy could not clear."""
