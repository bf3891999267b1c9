"""Exception types shared across the package."""


class VibsplatError(Exception):
    """Base class for all package-specific errors."""


class DimMismatch(VibsplatError):
    """Two images (or image-like arrays) do not share a shape."""


class BehindCamera(VibsplatError):
    """A point lies at or behind the near clipping plane."""


class ManifestMissing(VibsplatError):
    """A dataset manifest or a file it references does not exist."""


class BadPose(VibsplatError):
    """A camera pose fails the orthonormality / handedness checks."""


class TimestampDisorder(VibsplatError):
    """Frame timestamps are not strictly increasing per camera."""


class SpecInvalid(VibsplatError):
    """A synthetic scene description violates its own constraints."""


class VersionMismatch(VibsplatError):
    """A checkpoint was written by an incompatible format version."""


class ChecksumMismatch(VibsplatError):
    """A checkpoint's payload digest does not match its header."""


class NonFiniteLoss(VibsplatError):
    """A training step produced a NaN or infinite loss term."""
