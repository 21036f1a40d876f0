"""Segmentation overlap and surface-distance metrics, plus Bland-Altman."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import CodebookError, SampleSizeError, ShapeError, UndefinedDistanceError
from .volume import TISSUE_CODES, LabelVolume, VoxelGrid

_FACES = ndimage.generate_binary_structure(3, 1)


def _mask(m, spacing=None) -> tuple[np.ndarray, tuple[float, float, float]]:
    if isinstance(m, VoxelGrid):
        return m.data != 0, m.spacing if spacing is None else tuple(spacing)
    arr = np.asarray(m)
    return arr != 0, (1.0, 1.0, 1.0) if spacing is None else tuple(spacing)


def _pair(a, b, spacing):
    ma, sa = _mask(a, spacing)
    mb, _ = _mask(b, spacing)
    if ma.shape != mb.shape:
        raise ShapeError(f"mask shapes differ: {ma.shape} vs {mb.shape}")
    return ma, mb, sa


def dice(a, b) -> float:
    """2|A∩B| / (|A|+|B|); two empty masks score 1.0."""
    ma, mb, _ = _pair(a, b, None)
    na, nb = int(ma.sum()), int(mb.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(ma, mb).sum()) / (na + nb)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with at least one background face-neighbour.

    Voxels on the array edge count as boundary (outside is background).
    """
    return mask & ~ndimage.binary_erosion(mask, structure=_FACES, border_value=0)


def surface_distances(a, b, spacing=None) -> np.ndarray:
    """Pooled symmetric boundary-to-boundary distances in mm.

    The first block holds A's boundary voxels (C order) mapped to B's
    boundary, the second block B's boundary mapped to A's.
    """
    ma, mb, sp = _pair(a, b, spacing)
    if not ma.any() or not mb.any():
        raise UndefinedDistanceError("surface distance is undefined for an empty mask")
    ba, bb = boundary(ma), boundary(mb)
    to_b = ndimage.distance_transform_edt(~bb, sampling=sp)
    to_a = ndimage.distance_transform_edt(~ba, sampling=sp)
    return np.concatenate([to_b[ba], to_a[bb]])


def hd95(a, b, spacing=None) -> float:
    """95th percentile (linear interpolation) of the pooled surface distances."""
    return float(np.percentile(surface_distances(a, b, spacing), 95))


@dataclass
class ClassMetrics:
    code: int
    name: str
    dice: float
    hd95_mm: float | None
    both_empty: bool = False

    @property
    def hd95_defined(self) -> bool:
        return self.hd95_mm is not None


@dataclass
class ComparisonReport:
    classes: list[ClassMetrics]
    overall_dice: float | None
    empty_classes: list[str] = field(default_factory=list)

    def by_name(self, name: str) -> ClassMetrics:
        for c in self.classes:
            if c.name == name:
                return c
        raise KeyError(name)


def compare(labels_a: LabelVolume, labels_b: LabelVolume, codes=TISSUE_CODES) -> ComparisonReport:
    """Per-class Dice/HD95 and macro-averaged Dice over present classes."""
    if dict(labels_a.codebook) != dict(labels_b.codebook):
        raise CodebookError("label volumes use different codebooks")
    if labels_a.dims != labels_b.dims:
        raise ShapeError(f"label shapes differ: {labels_a.dims} vs {labels_b.dims}")
    sp = labels_a.spacing
    rows, empty = [], []
    for code in codes:
        name = labels_a.codebook[code]
        ma = labels_a.data == code
        mb = labels_b.data == code
        if not ma.any() and not mb.any():
            rows.append(ClassMetrics(code, name, 1.0, None, both_empty=True))
            empty.append(name)
            continue
        h = hd95(ma, mb, sp) if ma.any() and mb.any() else None
        rows.append(ClassMetrics(code, name, dice(ma, mb), h))
    present = [r.dice for r in rows if not r.both_empty]
    overall = float(np.mean(present)) if present else None
    return ComparisonReport(rows, overall, empty)


@dataclass
class BlandAltman:
    bias: float
    sd: float
    loa_low: float
    loa_high: float
    n: int


def bland_altman(x, y, z: float = 1.96) -> BlandAltman:
    """Bias and limits of agreement of paired measurements ``x - y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError("paired samples must have equal length")
    if x.size < 2:
        raise SampleSizeError("Bland-Altman needs at least two pairs")
    d = x - y
    bias = float(d.mean())
    sd = float(d.std(ddof=1))
    return BlandAltman(bias, sd, bias - z * sd, bias + z * sd, int(d.size))
