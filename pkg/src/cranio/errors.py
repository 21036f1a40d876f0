"""Exception hierarchy.

Every error carries a short machine-readable ``code`` that the CLI echoes in
its error records.
"""

from __future__ import annotations


class CranioError(ValueError):
    code = "error"


class OrientationError(CranioError):
    code = "orientation"


class DegenerateVolumeError(CranioError):
    code = "degenerate-volume"


class CodebookError(CranioError):
    code = "codebook"


class ShapeError(CranioError):
    code = "shape"


class MaskError(CranioError):
    code = "mask"


class EmptyBrainError(CranioError):
    code = "empty-brain"


# --- NIfTI container ---------------------------------------------------------

class NiftiFormatError(CranioError):
    code = "format"


class UnsupportedDtypeError(NiftiFormatError):
    code = "unsupported-dtype"


class TruncatedDataError(NiftiFormatError):
    code = "length"


class LabelDtypeError(NiftiFormatError):
    code = "label-dtype"


# --- morphometry -------------------------------------------------------------

class EmptySliceError(CranioError):
    code = "empty-slice"


class OpenSkullError(CranioError):
    code = "open-skull"


class ThicknessError(CranioError):
    code = "thickness"


class PreconditionError(CranioError):
    code = "precondition"


# --- metrics / statistics ----------------------------------------------------

class UndefinedDistanceError(CranioError):
    code = "undefined-distance"


class SampleSizeError(CranioError):
    code = "sample-size"


class DegenerateTableError(CranioError):
    code = "degenerate-table"


class DegeneratePrevalenceError(CranioError):
    code = "degenerate-prevalence"


class DomainError(CranioError):
    code = "domain"


class CollinearityError(CranioError):
    code = "collinearity"

    def __init__(self, message: str, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class RatingError(CranioError):
    code = "rating"
