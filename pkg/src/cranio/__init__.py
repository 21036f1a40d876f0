"""Extracranial tissue morphometry for labelled head MRI/CT volumes."""

from .errors import CranioError
from .volume import CANONICAL_CODEBOOK, LabelVolume, VoxelGrid

__all__ = ["CranioError", "CANONICAL_CODEBOOK", "LabelVolume", "VoxelGrid"]
__version__ = "0.1.0"
