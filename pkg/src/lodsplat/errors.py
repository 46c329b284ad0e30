"""Exception types shared across the package."""


class LodsplatError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(LodsplatError, ValueError):
    """An operation was called with invalid parameters."""


class InvariantError(LodsplatError, ValueError):
    """A scene or camera violates a structural invariant.

    Messages name the offending node id where one exists.
    """


class SceneFormatError(LodsplatError, ValueError):
    """A scene or camera file could not be parsed."""


class ConstructionError(LodsplatError, ValueError):
    """Subtree partitioning produced an inconsistent structure."""


class SltFormatError(LodsplatError, ValueError):
    """A binary subtree file is malformed, truncated, or has a bad magic/version."""


class ImageFormatError(LodsplatError, ValueError):
    """An image file could not be parsed as binary PPM."""


class ConfigError(LodsplatError, ValueError):
    """A hardware model configuration is inconsistent."""
