"""Exception types raised across the engine."""


class TacnnError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(TacnnError, ValueError):
    pass


class EncodingError(TacnnError, ValueError):
    pass


class BoundsError(TacnnError, IndexError):
    pass


class NumericError(TacnnError, ArithmeticError):
    pass


class ParseError(TacnnError, ValueError):
    """Malformed IDX content; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class FetchError(TacnnError, OSError):
    pass


class CheckpointError(TacnnError, ValueError):
    pass


class SummaryError(TacnnError, ValueError):
    pass


class ConfigError(TacnnError, ValueError):
    pass


class GuardError(TacnnError, ValueError):
    """Raised when an oracle is asked for an instance beyond its cost guard."""
