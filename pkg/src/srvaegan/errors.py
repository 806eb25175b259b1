"""Exception types raised across the package."""


class SRVGError(Exception):
    """Base class for all package errors."""


class ShapeError(SRVGError, ValueError):
    """An array does not have the extents an operation requires."""


class NonFiniteError(SRVGError, FloatingPointError):
    """A loss or gradient contained NaN or Inf."""


class MidiParseError(SRVGError, ValueError):
    """Malformed Standard MIDI File data.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class FormatError(SRVGError, ValueError):
    """A dataset or checkpoint file does not match its binary layout."""


class ConfigError(SRVGError, ValueError):
    """Invalid training/generation configuration."""
