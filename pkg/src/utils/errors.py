"""Error types shared by every pipeline area.

Each error carries the CLI exit code it maps to. Batch operations catch
DForgeError per item and keep going; everything else propagates.
"""


class DForgeError(Exception):
    """Base class for all expected pipeline failures."""

    exit_code = 2


class ConfigError(DForgeError):
    """Config file could not be parsed; message names the offending key."""


class FormatError(DForgeError):
    """A file on disk does not match its declared format."""


class InvalidPose(DForgeError):
    pass


class EmptyScene(DForgeError):
    pass


class DegenerateFrame(DForgeError):
    pass


class InvalidSpec(DForgeError):
    pass


class DegenerateOrbit(DForgeError):
    pass


class IdenticalPoses(DForgeError):
    pass


class GridMismatch(DForgeError):
    pass


class EmptyVolume(DForgeError):
    pass


class ShapeMismatch(DForgeError):
    pass


class EmptySequence(DForgeError):
    pass


class InvalidRange(DForgeError):
    pass


class InvalidTimestep(DForgeError):
    pass


class LengthMismatch(DForgeError):
    pass


class ImageTooSmall(DForgeError):
    pass


class AllZero(UserWarning):
    """Every reference-frame score was zero; frame 0 was returned."""
