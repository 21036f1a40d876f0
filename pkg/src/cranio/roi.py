"""Brain-anchored anterior crop.

Every axial slice gets a cut-off row: the most anterior brain row seen in
that slice or any slice below it.  Voxels anterior to the cut-off are
cleared, which removes the face while keeping a region that is comparable
across subjects regardless of how (or whether) the scan was defaced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBrainError, MaskError, ShapeError
from .volume import BACKGROUND, BRAIN, CANONICAL_CODEBOOK, LabelVolume, VoxelGrid, class_mask, code_of


@dataclass(frozen=True, eq=False)
class CropBoundary:
    """Per-slice anterior cut-off rows.

    ``top[z]`` is the most anterior brain row in slice ``z`` (0 when the slice
    holds no brain).  ``adjusted[z]`` is the running maximum of ``top`` from
    the inferior end up to ``z``; it is the row actually used for cutting.
    """

    top: np.ndarray
    adjusted: np.ndarray
    dims: tuple[int, int, int]

    def to_text(self) -> str:
        return "".join(f"{int(v)}\n" for v in self.adjusted)


def top_points(brain_mask) -> CropBoundary:
    """Compute raw and running-maximum anterior top points for each slice."""
    mask = brain_mask.data if isinstance(brain_mask, VoxelGrid) else np.asarray(brain_mask)
    if mask.ndim != 3:
        raise ShapeError(f"brain mask must be 3D, got shape {mask.shape}")
    if mask.dtype != np.bool_:
        if not np.all((mask == 0) | (mask == 1)):
            raise MaskError("brain mask must contain only 0 and 1")
        mask = mask.astype(bool)
    h = mask.shape[0]
    present = mask.any(axis=1)  # (H, D): slice z has brain at row x
    # last True row along x, or 0 for slices without brain
    rows = np.where(present, np.arange(h)[:, None], -1).max(axis=0)
    top = np.maximum(rows, 0).astype(np.int64)
    adjusted = np.maximum.accumulate(top)
    return CropBoundary(top, adjusted, tuple(int(n) for n in mask.shape))


def crop_keep_mask(boundary: CropBoundary) -> np.ndarray:
    """Boolean (H, 1, D) array that is True where voxels survive the crop."""
    h = boundary.dims[0]
    return (np.arange(h)[:, None] <= boundary.adjusted[None, :])[:, None, :]


def apply_crop(volume, boundary: CropBoundary):
    """Clear every voxel lying anterior to the adjusted cut-off.

    Works on a ``LabelVolume`` (cleared voxels become background), a
    ``VoxelGrid`` (cleared voxels become 0) or a bare array.
    """
    data = volume.data if isinstance(volume, (LabelVolume, VoxelGrid)) else np.asarray(volume)
    if tuple(data.shape) != tuple(boundary.dims):
        raise ShapeError(f"volume shape {data.shape} does not match boundary {boundary.dims}")
    fill = BACKGROUND if isinstance(volume, LabelVolume) else 0
    out = np.where(crop_keep_mask(boundary), data, np.asarray(fill, dtype=data.dtype))
    if isinstance(volume, (LabelVolume, VoxelGrid)):
        return volume.with_data(out)
    return out


def brain_boundary(labels: LabelVolume, allow_empty_brain: bool = False) -> CropBoundary:
    mask = class_mask(labels, code_of(labels, CANONICAL_CODEBOOK[BRAIN], BRAIN))
    if not allow_empty_brain and not mask.data.any():
        raise EmptyBrainError("label volume contains no brain voxels")
    return top_points(mask)


def crop_pipeline(labels: LabelVolume, allow_empty_brain: bool = False):
    """Derive the boundary from the brain class and crop the whole label map.

    Returns ``(cropped_labels, boundary)``.  An input without brain voxels is
    an error unless ``allow_empty_brain`` is set, in which case every slice
    is cut at row 0.
    """
    boundary = brain_boundary(labels, allow_empty_brain)
    return apply_crop(labels, boundary), boundary
