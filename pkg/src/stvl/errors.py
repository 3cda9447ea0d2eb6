"""Exception hierarchy shared across the package.

Everything raised on bad data or bad domain state derives from
``StvlError`` so callers (and the CLI) can distinguish data errors from
programming errors with a single except clause.
"""


class StvlError(Exception):
    """Base class for all domain errors raised by this package."""


# --- numeric token codec ---

class UnknownTokenError(StvlError):
    """A token label or (mantissa, exponent) pair is not in the vocabulary."""


class OutOfRangeError(StvlError):
    """A value exceeds the representable magnitude in strict encode mode."""


# --- grid data ---

class MalformedRowError(StvlError):
    """An input row cannot be parsed or does not fit the declared time grid."""


class GridOverflowError(StvlError):
    """A row/column coordinate lies outside the declared grid."""


class SquareIdOutOfRangeError(StvlError):
    """A flat square id lies outside [1, H*W]."""


class AllMissingCellError(StvlError):
    """A cell has no observed point, so gap filling has no anchor."""


class RangeOutOfBoundsError(StvlError):
    """A split range does not lie within the tensor's time span."""


class WindowTooLongError(StvlError):
    """history + horizon exceeds the number of frames available."""


# --- visual pipeline ---

class EmptyTensorError(StvlError):
    """An operation that needs data received an empty tensor."""


class NegativeValueError(StvlError):
    """A frame holds negative values where only counts are expected."""


class OutOfRangePixelError(StvlError):
    """A normalized frame holds values outside [0, 1]."""


class RaggedFramesError(StvlError):
    """Frame embeddings disagree in patch count or width."""


# --- dataset generation ---

class InfeasibleConstraintError(StvlError):
    """Generator parameters admit no valid examples."""


class EncodingFailureError(StvlError):
    """A window value could not be encoded into the vocabulary."""


class SchemaViolationError(StvlError):
    """A serialized record file does not match the expected schema."""


# --- reward / policy optimization ---

class EmptyGroundTruthError(StvlError):
    """The ground-truth sequence is empty."""


class LengthMismatchError(StvlError):
    """Two sequences that must align have different lengths."""


class GroupTooSmallError(StvlError):
    """A candidate group is too small to compute advantages."""


class ShapeMismatchError(StvlError):
    """Group inputs disagree in shape."""


class EmptyMaskError(StvlError):
    """A loss mask selects no positions."""


# --- evaluation ---

class NoObservedPointsError(StvlError):
    """No included points remain after masking."""


class ZeroMeanGroundTruthError(StvlError):
    """Relative error is undefined because the ground-truth mean is zero."""


class MissingCellError(StvlError):
    """A region cell has no prediction."""


class AlignmentError(StvlError):
    """Predictions do not line up with the evaluation windows."""


# --- baselines ---

class HistoryTooShortError(StvlError):
    """The history is shorter than the forecaster requires."""
