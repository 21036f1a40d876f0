"""Tissue volumetrics, CT bone thresholding and skull thickness.

Thickness is measured per axial slice: points are spread evenly along the
outer skull contour, and from each point a ray is marched inward along the
contour normal through the bilinearly interpolated bone mask until it leaves
the bone.  Samples from a 16-slice slab above the orbital roof are pooled,
trimmed to their central 95% and summarised by the median.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from skimage import measure

from .errors import (
    EmptySliceError,
    OpenSkullError,
    PreconditionError,
    ShapeError,
    ThicknessError,
)
from .roi import CropBoundary, apply_crop, brain_boundary
from .volume import BACKGROUND, LabelVolume, VoxelGrid, rotate_labels

DEFAULT_HU_THRESHOLD = 471.0
HU_WINDOWS = (300.0, 400.0, 500.0, 800.0)

N_POINTS = 100
N_SLICES = 16
SLAB_OFFSET_MM = 10.0
TRIM_PERCENTILES = (2.5, 97.5)
RAY_CAP_MM = 30.0
RAY_STEP_VOX = 0.1
ISO_LEVEL = 0.5
# half-width of the arc used to estimate the local tangent
TANGENT_HALF_ARC_MM = 1.5


# ---------------------------------------------------------------------------
# volumetrics
# ---------------------------------------------------------------------------

@dataclass
class VolumeReport:
    counts: dict[str, int]
    volume_mm3: dict[str, float]
    volume_cm3: dict[str, float]
    spacing: tuple[float, float, float]
    cropped: bool
    total_mm3: float = 0.0


def volumes(labels: LabelVolume, boundary: CropBoundary | None = None) -> VolumeReport:
    """Per-class voxel counts and volumes, optionally after cropping."""
    if boundary is not None:
        if tuple(boundary.dims) != labels.dims:
            raise ShapeError(f"boundary dims {boundary.dims} do not match labels {labels.dims}")
        labels = apply_crop(labels, boundary)
    voxel = labels.grid.voxel_volume_mm3
    binc = np.bincount(labels.data.ravel().astype(np.int64), minlength=max(labels.codebook) + 1)
    counts, mm3, cm3 = {}, {}, {}
    for code, name in sorted(labels.codebook.items()):
        n = int(binc[code]) if code < binc.size else 0
        counts[name] = n
        mm3[name] = n * voxel
        cm3[name] = n * voxel / 1000.0
    return VolumeReport(counts, mm3, cm3, labels.spacing, boundary is not None,
                        total_mm3=labels.data.size * voxel)


def hu_bone_mask(ct: VoxelGrid, threshold_hu: float = DEFAULT_HU_THRESHOLD) -> VoxelGrid:
    """Voxels strictly above ``threshold_hu``."""
    return ct.with_data((ct.data > threshold_hu).astype(np.uint8))


# ---------------------------------------------------------------------------
# contours
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SliceContours:
    """Outer and inner skull contours of one axial slice.

    Contours are closed, counter-clockwise in (x, y) and start at the point
    straight along +x from the slice centroid.  ``outer``/``inner`` are in
    millimetres; the ``*_vox`` twins are in voxel units.  ``inner`` is None
    for an open skull (no enclosed hole).
    """

    z: int
    outer: np.ndarray
    inner: np.ndarray | None
    outer_vox: np.ndarray
    inner_vox: np.ndarray | None
    centroid_vox: np.ndarray
    bone: np.ndarray = field(repr=False)
    spacing: tuple[float, float] = (1.0, 1.0)

    @property
    def open_skull(self) -> bool:
        return self.inner is None


_EIGHT = np.ones((3, 3), dtype=bool)


def _largest(labelled: np.ndarray, n: int) -> np.ndarray:
    sizes = np.bincount(labelled.ravel(), minlength=n + 1)
    sizes[0] = 0
    return labelled == int(np.argmax(sizes))


def _canonical_contour(pts: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    if len(pts) > 1 and np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    x, y = pts[:, 0], pts[:, 1]
    area2 = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    if area2 < 0:
        pts = pts[::-1]
    d = pts - centroid
    ang = np.abs(np.round(np.arctan2(d[:, 1], d[:, 0]), 12))
    return np.roll(pts, -int(np.argmin(ang)), axis=0)


def _iso_contour(region: np.ndarray, connected: str) -> np.ndarray:
    padded = np.pad(region.astype(np.float64), 1)
    found = measure.find_contours(padded, ISO_LEVEL, fully_connected=connected)
    return max(found, key=len) - 1.0


def _slice(mask, z: int) -> tuple[np.ndarray, tuple[float, float]]:
    data = mask.data if isinstance(mask, VoxelGrid) else np.asarray(mask)
    spacing = mask.spacing if isinstance(mask, VoxelGrid) else (1.0, 1.0, 1.0)
    if data.ndim != 3:
        raise ShapeError(f"bone mask must be 3D, got shape {data.shape}")
    if not 0 <= z < data.shape[2]:
        raise PreconditionError(f"slice {z} outside 0..{data.shape[2] - 1}")
    return data[:, :, z] != 0, (float(spacing[0]), float(spacing[1]))


def slice_contours(bone_mask, z: int) -> SliceContours:
    """Outer boundary of the largest bone component and of its largest hole."""
    sl, sp = _slice(bone_mask, z)
    if not sl.any():
        raise EmptySliceError(f"slice {z} contains no bone")
    labelled, n = ndimage.label(sl, structure=_EIGHT)
    bone = _largest(labelled, n)
    filled = ndimage.binary_fill_holes(bone)
    centroid = np.argwhere(filled).mean(axis=0)
    scale = np.asarray(sp)

    outer = _canonical_contour(_iso_contour(filled, "high"), centroid)
    holes = filled & ~bone
    inner = None
    if holes.any():
        hl, hn = ndimage.label(holes)
        hole = _largest(hl, hn)
        inner = _canonical_contour(_iso_contour(hole, "low"), centroid)
    return SliceContours(
        z=z,
        outer=outer * scale,
        inner=None if inner is None else inner * scale,
        outer_vox=outer,
        inner_vox=inner,
        centroid_vox=centroid,
        bone=bone,
        spacing=sp,
    )


# ---------------------------------------------------------------------------
# thickness
# ---------------------------------------------------------------------------

def _arc_points(closed: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Points at arc lengths ``s`` (mm, wrapped) along a closed mm polyline."""
    ring = np.vstack([closed, closed[:1]])
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(ring, axis=0), axis=1))])
    s = np.mod(s, cum[-1])
    return np.column_stack([np.interp(s, cum, ring[:, 0]), np.interp(s, cum, ring[:, 1])])


def _perimeter(closed: np.ndarray) -> float:
    ring = np.vstack([closed, closed[:1]])
    return float(np.linalg.norm(np.diff(ring, axis=0), axis=1).sum())


@dataclass
class RaySamples:
    """Per-ray detail behind a list of slice thickness samples."""

    origins_mm: np.ndarray
    normals: np.ndarray
    thickness_mm: np.ndarray  # NaN where the ray was dropped
    method: str

    @property
    def valid(self) -> np.ndarray:
        return self.thickness_mm[np.isfinite(self.thickness_mm)]


def _march(contours: SliceContours, origins: np.ndarray, normals: np.ndarray,
           cap_mm: float, step_vox: float) -> np.ndarray:
    sp = np.asarray(contours.spacing)
    step_mm = step_vox * float(sp.min())
    n_steps = int(np.ceil(cap_mm / step_mm)) + 1
    t = np.arange(n_steps) * step_mm
    pos_mm = origins[:, None, :] + t[None, :, None] * normals[:, None, :]
    pos = pos_mm / sp
    bone = contours.bone.astype(np.float64)
    h, w = bone.shape
    vals = ndimage.map_coordinates(bone, [pos[..., 0].ravel(), pos[..., 1].ravel()],
                                   order=1, mode="constant", cval=0.0).reshape(pos.shape[:2])
    outside = (pos[..., 0] < 0) | (pos[..., 0] > h - 1) | (pos[..., 1] < 0) | (pos[..., 1] > w - 1)
    inside = vals >= ISO_LEVEL

    out = np.full(len(origins), np.nan)
    # the ray must enter bone within one voxel of its origin on the contour
    entry_window = int(np.ceil(1.0 / step_vox))
    for k in range(len(origins)):
        ins = inside[k]
        entered = np.flatnonzero(ins[:entry_window + 1])
        if entered.size == 0:
            continue
        j0 = entered[0]
        exits = np.flatnonzero(~ins[j0:])
        if exits.size == 0:
            continue  # still in bone at the cap
        j1 = j0 + exits[0]
        if outside[k, : j1 + 1].any():
            continue
        v = vals[k]
        if j0 == 0:
            t_in = 0.0
        else:
            t_in = t[j0 - 1] + (ISO_LEVEL - v[j0 - 1]) / (v[j0] - v[j0 - 1]) * step_mm
        t_out = t[j1 - 1] + (v[j1 - 1] - ISO_LEVEL) / (v[j1 - 1] - v[j1]) * step_mm
        thick = t_out - t_in
        if thick <= cap_mm:
            out[k] = thick
    return out


def slice_rays(bone_mask, z: int, n_points: int = N_POINTS, method: str = "normal",
               cap_mm: float = RAY_CAP_MM, step_vox: float = RAY_STEP_VOX) -> RaySamples:
    """Thickness rays for one slice, with per-ray geometry.

    ``method="normal"`` marches along the inward contour normal.
    ``method="nearest"`` instead takes the distance from each outer point to
    the closest point of the inner contour.
    """
    if n_points < 1:
        raise PreconditionError("n_points must be positive")
    c = slice_contours(bone_mask, z)
    if c.open_skull:
        raise OpenSkullError(f"slice {z} has no enclosed inner boundary")
    perim = _perimeter(c.outer)
    s = np.arange(n_points) * (perim / n_points)
    origins = _arc_points(c.outer, s)
    ahead = _arc_points(c.outer, s + TANGENT_HALF_ARC_MM)
    behind = _arc_points(c.outer, s - TANGENT_HALF_ARC_MM)
    tangent = ahead - behind
    normals = np.column_stack([-tangent[:, 1], tangent[:, 0]])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    centroid_mm = c.centroid_vox * np.asarray(c.spacing)
    flip = np.einsum("ij,ij->i", normals, centroid_mm - origins) < 0
    normals[flip] *= -1

    if method == "normal":
        thick = _march(c, origins, normals, cap_mm, step_vox)
    elif method == "nearest":
        d = np.linalg.norm(origins[:, None, :] - c.inner[None, :, :], axis=2).min(axis=1)
        thick = np.where(d <= cap_mm, d, np.nan)
    else:
        raise ValueError(f"unknown thickness method {method!r}")
    return RaySamples(origins, normals, thick, method)


def slice_thickness(bone_mask, z: int, n_points: int = N_POINTS, **kwargs) -> np.ndarray:
    """Thickness samples (mm) for one axial slice; dropped rays are omitted."""
    return slice_rays(bone_mask, z, n_points, **kwargs).valid


@dataclass
class ThicknessEstimate:
    start_slice: int
    slices: list[int]
    slice_samples: list[np.ndarray]
    skipped: dict[int, str]
    raw_pool: np.ndarray
    trimmed_pool: np.ndarray
    median_mm: float
    degraded: bool
    pooling: str = "pooled"

    @property
    def n_usable(self) -> int:
        return sum(1 for s in self.slice_samples if s.size)


def trim_central(values, percentiles: Sequence[float] = TRIM_PERCENTILES) -> np.ndarray:
    """Values inside the [lo, hi] percentile band (linear interpolation)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values
    lo, hi = np.percentile(values, percentiles)
    return values[(values >= lo) & (values <= hi)]


def thickness_pipeline(bone_mask: VoxelGrid, reference_slice: int, n_points: int = N_POINTS,
                       n_slices: int = N_SLICES, offset_mm: float = SLAB_OFFSET_MM,
                       trim: Sequence[float] = TRIM_PERCENTILES, pooling: str = "pooled",
                       method: str = "normal", cap_mm: float = RAY_CAP_MM) -> ThicknessEstimate:
    """Median skull thickness over a slab of 1 mm axial slices.

    The slab starts ``offset_mm`` above ``reference_slice`` (the top orbital
    roof slice) and extends superiorly for ``n_slices`` slices.
    """
    if not isinstance(bone_mask, VoxelGrid):
        bone_mask = VoxelGrid(np.asarray(bone_mask))
    if not np.allclose(bone_mask.spacing, 1.0, atol=1e-3):
        raise PreconditionError(f"thickness needs 1 mm isotropic voxels, got {bone_mask.spacing}")
    depth = bone_mask.dims[2]
    ref = int(reference_slice)
    if not 0 <= ref < depth:
        raise PreconditionError(f"reference slice {ref} outside 0..{depth - 1}")
    if pooling not in ("pooled", "per_slice"):
        raise ValueError(f"unknown pooling mode {pooling!r}")

    start = ref + int(round(offset_mm))
    slices = list(range(start, start + n_slices))
    samples, skipped = [], {}
    for z in slices:
        if z >= depth:
            skipped[z] = "outside-volume"
            samples.append(np.empty(0))
            continue
        try:
            s = slice_thickness(bone_mask, z, n_points, method=method, cap_mm=cap_mm)
        except (EmptySliceError, OpenSkullError) as exc:
            skipped[z] = exc.code
            samples.append(np.empty(0))
            continue
        if s.size == 0:
            skipped[z] = "no-valid-rays"
        samples.append(s)

    usable = [s for s in samples if s.size]
    if not usable:
        raise ThicknessError(f"no usable slices in {start}..{start + n_slices - 1}")
    raw = np.concatenate(usable)
    if pooling == "pooled":
        trimmed = trim_central(raw, trim)
    else:
        trimmed = np.concatenate([trim_central(s, trim) for s in usable])
    return ThicknessEstimate(
        start_slice=start,
        slices=slices,
        slice_samples=samples,
        skipped=skipped,
        raw_pool=raw,
        trimmed_pool=trimmed,
        median_mm=float(np.median(trimmed)),
        degraded=len(usable) < n_slices,
        pooling=pooling,
    )


# ---------------------------------------------------------------------------
# tilt ablation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TiltRow:
    pitch_deg: float
    tissue: str
    volume0_mm3: float
    volume_mm3: float

    @property
    def abs_delta_mm3(self) -> float:
        return abs(self.volume_mm3 - self.volume0_mm3)

    @property
    def percent_delta(self) -> float | None:
        if self.volume0_mm3 <= 0:
            return None
        return 100.0 * self.abs_delta_mm3 / self.volume0_mm3


@dataclass
class TiltAblationReport:
    rows: list[TiltRow]

    def percent(self, pitch_deg: float, tissue: str) -> float | None:
        for r in self.rows:
            if r.pitch_deg == pitch_deg and r.tissue == tissue:
                return r.percent_delta
        raise KeyError((pitch_deg, tissue))

    def max_percent(self, pitch_deg: float | None = None) -> float:
        vals = [r.percent_delta for r in self.rows
                if r.percent_delta is not None and (pitch_deg is None or r.pitch_deg == pitch_deg)]
        return max(vals) if vals else 0.0


def tilt_ablation(labels: LabelVolume,
                  boundary_fn: Callable[[LabelVolume], CropBoundary] = brain_boundary,
                  pitch_deg: float = 5.0, include_control: bool = True) -> TiltAblationReport:
    """Volume change after pitching the head by +/- ``pitch_deg``.

    The crop is re-derived from each rotated volume.  With
    ``include_control`` a 0 degree row runs through the same path and must
    come out exactly zero.
    """
    base = volumes(labels, boundary_fn(labels))
    pitches = ([0.0] if include_control else []) + [abs(pitch_deg), -abs(pitch_deg)]
    pitches = list(dict.fromkeys(float(p) + 0.0 for p in pitches))  # +0.0 folds -0.0 into 0.0
    rows = []
    for pitch in pitches:
        tilted = rotate_labels(labels, pitch)
        rep = volumes(tilted, boundary_fn(tilted))
        for code, name in sorted(labels.codebook.items()):
            if code == BACKGROUND:
                continue
            rows.append(TiltRow(pitch, name, base.volume_mm3[name], rep.volume_mm3[name]))
    return TiltAblationReport(rows)
