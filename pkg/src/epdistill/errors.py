"""Exception types shared across the package."""


class EpdistillError(Exception):
    """Base class for all library errors."""


class ZeroRowError(EpdistillError, ValueError):
    """A row that must be normalizable has (numerically) zero length."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"row {index} has zero norm and cannot be normalized")


class RowCountMismatchError(EpdistillError, ValueError):
    """Two descriptor sets that must pair row-for-row have different row counts."""


class DimMismatchError(EpdistillError, ValueError):
    """Two descriptor sets that must live in the same space have different dims."""


class ShapeMismatchError(EpdistillError, ValueError):
    """Two matrices that must share a full shape do not."""


class BadDimensionError(EpdistillError, ValueError):
    """A requested dimension or size is outside its allowed range."""


class NeedTwoViewsError(EpdistillError, ValueError):
    """An operation over view pairs was given fewer than two views."""


class KernelTooLargeError(EpdistillError, ValueError):
    """Patch kernel exceeds the raster extent."""


class NumericOverflowError(EpdistillError, FloatingPointError):
    """A literal exp() evaluation would overflow; see the fast detection loss."""


class OutOfBoundsError(EpdistillError, ValueError):
    """A keypoint coordinate falls outside the associated raster."""

    def __init__(self, index: int, message: str = ""):
        self.index = index
        super().__init__(message or f"keypoint {index} is out of bounds")


class SvdFailureError(EpdistillError, RuntimeError):
    """The underlying singular value decomposition did not converge."""


class DivergenceError(EpdistillError, RuntimeError):
    """Training loss exploded past the divergence guard."""


class MalformedFileError(EpdistillError, ValueError):
    """A serialized matrix/raster/keypoint file violates its format."""


class BadInputSizeError(EpdistillError, ValueError):
    """Input raster size does not meet a divisibility requirement."""
