"""Voxel-grid data model.

Index axes follow one fixed anatomical convention once a grid has been
canonicalized: the first index increases toward anterior, the second toward
the subject's right and the third toward superior.  World coordinates follow
NIfTI RAS+ (x right, y anterior, z superior), in millimetres.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import (
    CodebookError,
    DegenerateVolumeError,
    OrientationError,
    PreconditionError,
    ShapeError,
)

BACKGROUND, BRAIN, SKULL, FAT, MUSCLE = 0, 1, 2, 3, 4

CANONICAL_CODEBOOK: dict[int, str] = {
    BACKGROUND: "background",
    BRAIN: "brain",
    SKULL: "skull",
    FAT: "subcutaneous_fat",
    MUSCLE: "muscle",
}

# extracranial classes reported by volumetrics and segmentation comparison
TISSUE_CODES = (SKULL, FAT, MUSCLE)

MAX_PITCH_DEG = 30.0

# world axis (0=R, 1=A, 2=S) -> index axis in the canonical frame
_CANONICAL_POSITION = {1: 0, 0: 1, 2: 2}
_AXIS_CODES = (("L", "R"), ("P", "A"), ("I", "S"))


def canonical_affine(spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Voxel-to-world affine of an (anterior, right, superior) lattice at the origin."""
    sx, sy, sz = (float(v) for v in spacing)
    return np.array([
        [0.0, sy, 0.0, 0.0],
        [sx, 0.0, 0.0, 0.0],
        [0.0, 0.0, sz, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _readonly(arr: np.ndarray) -> np.ndarray:
    if arr.flags.writeable:
        arr = arr.copy()
        arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """A 3D scalar lattice with voxel spacing and a voxel-to-world affine.

    ``spacing`` and ``affine`` may be given independently; when only one is
    supplied the other is derived from it.  Without an affine the array is
    taken to be in the canonical frame already.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] | None = None
    affine: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeError(f"expected a 3D array, got shape {data.shape}")
        if data.size == 0:
            raise DegenerateVolumeError(f"zero-extent volume {data.shape}")
        affine = self.affine
        spacing = self.spacing
        if affine is None:
            sp = (1.0, 1.0, 1.0) if spacing is None else spacing
            affine = canonical_affine(sp)
        affine = np.array(affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ShapeError(f"affine must be 4x4, got {affine.shape}")
        det = np.linalg.det(affine[:3, :3])
        if not np.isfinite(det) or abs(det) <= 1e-12:
            raise OrientationError("voxel-to-world affine is not invertible")
        if spacing is None:
            spacing = tuple(float(v) for v in np.linalg.norm(affine[:3, :3], axis=0))
        spacing = tuple(float(v) for v in spacing)
        if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
            raise ShapeError(f"spacing must be three positive finite values, got {spacing}")
        affine.setflags(write=False)
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def with_data(self, data: np.ndarray) -> "VoxelGrid":
        data = np.asarray(data)
        if data.shape != self.data.shape:
            raise ShapeError(f"shape {data.shape} does not match grid {self.dims}")
        return VoxelGrid(data, self.spacing, self.affine)

    def voxel_to_world(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.float64)
        return ijk @ self.affine[:3, :3].T + self.affine[:3, 3]

    def world_to_voxel(self, xyz) -> np.ndarray:
        inv = np.linalg.inv(self.affine)
        xyz = np.asarray(xyz, dtype=np.float64)
        return xyz @ inv[:3, :3].T + inv[:3, 3]


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer class codes on a voxel grid, with a code -> name codebook."""

    grid: VoxelGrid
    codebook: Mapping[int, str] = field(default_factory=lambda: dict(CANONICAL_CODEBOOK))

    def __post_init__(self):
        data = self.grid.data
        if not np.issubdtype(data.dtype, np.integer):
            raise CodebookError(f"label data must be integer typed, got {data.dtype}")
        codebook = {int(k): str(v) for k, v in dict(self.codebook).items()}
        present = np.unique(data)
        unknown = sorted(int(v) for v in present if int(v) not in codebook)
        if unknown:
            raise CodebookError(f"label values {unknown} are not in the codebook")
        object.__setattr__(self, "codebook", codebook)

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0), affine=None, codebook=None) -> "LabelVolume":
        grid = VoxelGrid(np.asarray(data), None if affine is not None else spacing, affine)
        return cls(grid, CANONICAL_CODEBOOK if codebook is None else codebook)

    @property
    def data(self) -> np.ndarray:
        return self.grid.data

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.grid.dims

    @property
    def spacing(self) -> tuple[float, float, float]:
        return self.grid.spacing

    def with_data(self, data: np.ndarray) -> "LabelVolume":
        return LabelVolume(self.grid.with_data(data), self.codebook)


@dataclass(frozen=True)
class Orientation:
    """Anatomical direction toward which each index axis increases.

    ``axes`` holds one code per index axis drawn from L/R, P/A, I/S, e.g.
    ``("A", "R", "S")`` for the canonical frame.  ``world_axes`` and ``signs``
    give the same information numerically (RAS world axis index, +1/-1).
    """

    world_axes: tuple[int, int, int]
    signs: tuple[int, int, int]

    def __post_init__(self):
        if sorted(self.world_axes) != [0, 1, 2]:
            raise OrientationError(f"axes {self.world_axes} are not a permutation")
        if any(s not in (1, -1) for s in self.signs):
            raise OrientationError(f"signs must be +1/-1, got {self.signs}")

    @property
    def axes(self) -> tuple[str, str, str]:
        return tuple(_AXIS_CODES[w][s > 0] for w, s in zip(self.world_axes, self.signs))

    @property
    def is_canonical(self) -> bool:
        return self.axes == ("A", "R", "S")


def orientation_of(affine) -> Orientation:
    """Closest axis-aligned orientation of a voxel-to-world affine.

    Greedy assignment on the largest absolute direction cosine, which copes
    with oblique acquisitions the same way as nibabel's ``io_orientation``.
    """
    m = np.asarray(affine, dtype=np.float64)[:3, :3]
    if abs(np.linalg.det(m)) <= 1e-12:
        raise OrientationError("voxel-to-world affine is not invertible")
    cos = np.abs(m / np.linalg.norm(m, axis=0))
    world_axes = [-1, -1, -1]
    signs = [1, 1, 1]
    for _ in range(3):
        w, i = np.unravel_index(np.argmax(cos), cos.shape)
        world_axes[i] = int(w)
        signs[i] = 1 if m[w, i] > 0 else -1
        cos[w, :] = -1.0
        cos[:, i] = -1.0
    return Orientation(tuple(world_axes), tuple(signs))


def canonicalize(grid: VoxelGrid) -> VoxelGrid:
    """Reorder axes so index axes run (anterior, right, superior).

    Only permutations and flips are applied; no voxel is interpolated.
    """
    ornt = orientation_of(grid.affine)
    if ornt.is_canonical:
        return grid
    pos = [_CANONICAL_POSITION[w] for w in ornt.world_axes]
    # new axis p comes from old axis order[p]
    order = [pos.index(p) for p in range(3)]
    data = np.transpose(grid.data, order)
    flips = tuple(p for p in range(3) if ornt.signs[order[p]] < 0)
    if flips:
        data = np.flip(data, axis=flips)

    # old index = T @ new index (homogeneous)
    dims = grid.dims
    t = np.zeros((4, 4))
    t[3, 3] = 1.0
    for i in range(3):
        if ornt.signs[i] > 0:
            t[i, pos[i]] = 1.0
        else:
            t[i, pos[i]] = -1.0
            t[i, 3] = dims[i] - 1
    spacing = tuple(grid.spacing[order[p]] for p in range(3))
    return VoxelGrid(np.ascontiguousarray(data), spacing, grid.affine @ t)


def canonicalize_labels(labels: LabelVolume) -> LabelVolume:
    return LabelVolume(canonicalize(labels.grid), labels.codebook)


def _axis_coords(n_in: int, s_in: float, target: float) -> tuple[int, np.ndarray]:
    n_out = max(1, int(round(n_in * s_in / target)))
    # output grid shares the outer corner of input voxel 0
    coords = -0.5 + (np.arange(n_out) + 0.5) * (target / s_in)
    return n_out, coords


def _take_nearest(arr: np.ndarray, axis: int, coords: np.ndarray) -> np.ndarray:
    idx = np.clip(np.floor(coords + 0.5).astype(np.intp), 0, arr.shape[axis] - 1)
    return np.take(arr, idx, axis=axis)


def _take_linear(arr: np.ndarray, axis: int, coords: np.ndarray) -> np.ndarray:
    n = arr.shape[axis]
    c = np.clip(coords, 0.0, n - 1)
    i0 = np.floor(c).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    shape = [1, 1, 1]
    shape[axis] = c.size
    f = (c - i0).reshape(shape)
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    # a + f*(b-a) is exact when a == b, so constant fields survive unchanged
    return a + f * (b - a)


def resample_isotropic(grid, target_mm: float = 1.0, mode: str = "nearest"):
    """Resample onto an isotropic lattice of ``target_mm`` voxels.

    Accepts a ``VoxelGrid`` or a ``LabelVolume``; label volumes are always
    resampled with nearest-neighbour lookup so no new codes appear.
    """
    if not (np.isfinite(target_mm) and target_mm > 0):
        raise PreconditionError(f"target voxel size must be positive, got {target_mm}")
    if isinstance(grid, LabelVolume):
        return LabelVolume(resample_isotropic(grid.grid, target_mm, "nearest"), grid.codebook)
    if mode not in ("nearest", "trilinear"):
        raise ValueError(f"unknown resampling mode {mode!r}")
    if grid.data.size == 0:
        raise DegenerateVolumeError("cannot resample a zero-extent volume")

    out = grid.data
    if mode == "trilinear":
        out = out.astype(np.float64)
    scale = np.eye(4)
    for axis, (n, s) in enumerate(zip(grid.dims, grid.spacing)):
        _, coords = _axis_coords(n, s, target_mm)
        if mode == "nearest":
            out = _take_nearest(out, axis, coords)
        else:
            out = _take_linear(out, axis, coords)
        scale[axis, axis] = target_mm / s
        scale[axis, 3] = -0.5 + 0.5 * target_mm / s
    return VoxelGrid(np.ascontiguousarray(out), (target_mm,) * 3, grid.affine @ scale)


def _pitch_matrix(pitch_deg: float) -> np.ndarray:
    # rotation in the (anterior, superior) plane about the left-right axis;
    # positive pitch turns the anterior direction toward superior
    th = np.deg2rad(pitch_deg)
    c, s = np.cos(th), np.sin(th)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def rotate_labels(labels: LabelVolume, pitch_deg: float) -> LabelVolume:
    """Rigidly pitch a label volume about the left-right axis.

    The rotation centre is the centroid of all non-background voxels.  Each
    output voxel pulls its code from the nearest input voxel under the
    inverse rotation; anything that maps outside the input is background.
    """
    if not np.isfinite(pitch_deg) or abs(pitch_deg) > MAX_PITCH_DEG:
        raise PreconditionError(f"|pitch| must be <= {MAX_PITCH_DEG} degrees, got {pitch_deg}")
    return _pull_back(labels, pitch_deg)


def _pull_back(labels: LabelVolume, pitch_deg: float) -> LabelVolume:
    # unbounded core of rotate_labels
    data = labels.data
    fg = np.argwhere(data != BACKGROUND)
    if fg.size == 0:
        raise DegenerateVolumeError("cannot rotate an all-background volume")
    center = fg.mean(axis=0)
    sp = np.asarray(labels.spacing)
    inv = _pitch_matrix(pitch_deg).T
    h, w, d = data.shape

    out = np.zeros_like(data)
    xx, yy = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    qx = (xx - center[0]) * sp[0]
    qy = (yy - center[1]) * sp[1]
    for z in range(d):
        qz = (z - center[2]) * sp[2]
        src = [
            (inv[i, 0] * qx + inv[i, 1] * qy + inv[i, 2] * qz) / sp[i] + center[i]
            for i in range(3)
        ]
        idx = [np.floor(c + 0.5).astype(np.intp) for c in src]
        inside = (
            (idx[0] >= 0) & (idx[0] < h)
            & (idx[1] >= 0) & (idx[1] < w)
            & (idx[2] >= 0) & (idx[2] < d)
        )
        out[:, :, z][inside] = data[idx[0][inside], idx[1][inside], idx[2][inside]]
    return labels.with_data(out)


def code_of(labels: LabelVolume, name: str, default: int | None = None) -> int:
    """Code the codebook assigns to class ``name``."""
    for code, n in labels.codebook.items():
        if n == name:
            return code
    if default is None:
        raise CodebookError(f"class {name!r} is not in the codebook")
    return default


def class_mask(labels: LabelVolume, code: int) -> VoxelGrid:
    """Binary (uint8) mask of voxels carrying ``code``."""
    if int(code) not in labels.codebook:
        raise CodebookError(f"code {code} is not in the codebook {sorted(labels.codebook)}")
    return labels.grid.with_data((labels.data == code).astype(np.uint8))
