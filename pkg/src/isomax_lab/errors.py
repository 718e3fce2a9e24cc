"""Exception hierarchy shared by every module."""


class IsoMaxLabError(Exception):
    """Base class for all errors raised by isomax_lab."""


class DimensionError(IsoMaxLabError, ValueError):
    """Array shapes do not line up."""


class ValidationError(IsoMaxLabError, ValueError):
    """An input violates a documented precondition."""


class StateError(IsoMaxLabError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class NonFiniteError(IsoMaxLabError, FloatingPointError):
    """A loss or gradient became NaN/Inf."""


class IdxFormatError(IsoMaxLabError, ValueError):
    """Bad magic number or malformed IDX header."""


class IdxConsistencyError(IsoMaxLabError, ValueError):
    """Image and label files disagree on the number of items."""


class TruncatedFileError(IsoMaxLabError, OSError):
    """An IDX file ended before its header said it would."""
