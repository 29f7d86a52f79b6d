"""Exception hierarchy shared by every sparknet module."""


class SparkNetError(Exception):
    pass


class AudioFormatError(SparkNetError):
    """Malformed or unreadable WAV container."""


class UnsupportedFormatError(AudioFormatError):
    """Readable WAV with an encoding, rate or channel layout we refuse to convert."""


class ConfigError(SparkNetError):
    pass


class ShapeError(SparkNetError):
    pass


class CheckpointError(SparkNetError):
    pass


class IngestionError(SparkNetError):
    pass


class DivergenceError(SparkNetError):
    """Raised when an optimizer step sees non-finite gradients."""
