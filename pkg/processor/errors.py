"""Exception hierarchy shared by the segmentation engine."""


class SegmentationError(Exception):
    """Base exception for engine failures."""


class InvalidArgumentError(SegmentationError, ValueError):
    """Raised when shapes, ranges or configuration values are invalid."""


class NumericError(SegmentationError, ArithmeticError):
    """Raised when inputs or losses stop being finite."""


class TapeStateError(SegmentationError, RuntimeError):
    """Raised when a gradient tape is used after its reverse pass."""


class FormatError(SegmentationError):
    """Raised when a binary or JSON artifact cannot be parsed.

    Parameters
    ----------
    message : str
        Human-readable description of the problem.
    offset : int, optional
        Byte offset at which parsing failed, by default ``0``.
    """

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class AcceptanceError(SegmentationError):
    """Raised when a verification run finds a violated property."""
