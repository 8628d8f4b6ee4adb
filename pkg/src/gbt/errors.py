"""Exception types shared across the package."""


class GbtError(Exception):
    """Base class for package-specific failures."""


class ZeroDirection(GbtError):
    """Ray construction from a (near-)zero direction vector."""


class OutOfBounds(GbtError):
    """Pixel coordinate outside the image."""


class ShapeMismatch(GbtError):
    """Tensor shapes incompatible with the requested operation."""


class NonCanonicalPoses(GbtError):
    """No input pose is the identity; poses must be canonicalized first."""


class InsufficientViews(GbtError):
    """A scene has fewer views than context + query requires."""


class IoError(GbtError):
    """File read/write failure."""


class BadMagic(GbtError):
    """Checkpoint file does not start with the expected magic bytes."""


class UnsupportedVersion(GbtError):
    """Checkpoint format version is not understood."""


class ShapeMismatchOnLoad(GbtError):
    """Checkpoint parameter shapes do not match the model configuration."""


class ConfigError(GbtError):
    """Run configuration file is malformed or out of range."""
