"""Exception hierarchy shared by every unifex module."""


class UnifexError(Exception):
    """Base class for all toolkit errors."""


class FormatError(UnifexError):
    """A file does not conform to its on-disk format."""


class DataError(UnifexError):
    """Structurally valid input carrying illegal values (NaN, negative ids, ...)."""


class IoError(UnifexError):
    """Filesystem read or write failure."""


class ShapeError(UnifexError):
    """Array arguments with inconsistent dimensions."""


class ConfigError(UnifexError):
    """Invalid or contradictory configuration."""


class NumericError(UnifexError):
    """Non-finite values produced during computation."""
