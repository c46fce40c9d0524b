"""Exception hierarchy shared by all gluemix modules.

Exit-code mapping used by the CLI: ConfigError -> 2, DataError (and its
checkpoint subclasses) -> 3, NumericError -> 4.
"""


class GluemixError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(GluemixError):
    """Invalid configuration value, option combination, or call contract."""

    exit_code = 2


class DataError(GluemixError):
    """Problem with user-supplied data (shapes, labels, files)."""

    exit_code = 3


class ShapeError(DataError):
    """Array dimensions do not match the declared architecture."""


class LabelError(DataError):
    """Class label outside the valid range for the output layer."""


class NumericError(GluemixError):
    """Non-finite values where finite numbers are required."""

    exit_code = 4


class CheckpointError(DataError):
    """Base class for checkpoint file problems."""


class FormatError(CheckpointError):
    """Bad magic bytes or malformed/inconsistent header."""


class CorruptionError(CheckpointError):
    """Payload length does not match the header."""


class VersionError(CheckpointError):
    """Checkpoint format version not supported by this build."""
