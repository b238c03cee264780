"""Exception types raised across the package."""


class GganError(Exception):
    pass


class ConfigError(GganError, ValueError):
    """Invalid configuration or hyperparameter combination."""


class LengthError(GganError, ValueError):
    """Waveform too short for the requested frame count."""


class DataError(GganError, ValueError):
    """Non-finite or otherwise malformed sample data."""


class RangeError(GganError, ValueError):
    """Value outside the normalized [-1, 1] range."""


class FormatError(GganError, ValueError):
    """Malformed, truncated or incompatible file."""


class ShapeError(GganError, ValueError):
    pass


class TrainingHalted(GganError, RuntimeError):
    """Training stopped on a non-finite loss; carries the snapshot path."""

    def __init__(self, message, snapshot_path=None, iteration=None):
        super().__init__(message)
        self.snapshot_path = snapshot_path
        self.iteration = iteration
