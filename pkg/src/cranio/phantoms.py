"""Synthetic head phantoms with known geometry.

Used by the test-suite, the acceptance checks and ``cranio phantom``.
All phantoms are in the canonical frame (anterior, right, superior).
"""

from __future__ import annotations

import numpy as np

from .volume import BRAIN, FAT, MUSCLE, SKULL, LabelVolume, VoxelGrid


def radial_distance(shape, center, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Distance (mm) of each voxel centre from ``center`` (voxel coordinates)."""
    axes = [(np.arange(n) - c) * s for n, c, s in zip(shape, center, spacing)]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij", sparse=True)
    return np.sqrt(xx ** 2 + yy ** 2 + zz ** 2)


def spherical_shell(outer_mm: float = 60.0, wall_mm: float = 5.0, spacing: float = 1.0,
                    margin_mm: float = 4.0) -> VoxelGrid:
    """Binary shell with ``outer_mm - wall_mm <= r < outer_mm``, centred in the grid."""
    n = int(np.ceil(2 * (outer_mm + margin_mm) / spacing)) + 1
    c = (n - 1) / 2.0
    r = radial_distance((n, n, n), (c, c, c), (spacing,) * 3)
    shell = (r >= outer_mm - wall_mm) & (r < outer_mm)
    return VoxelGrid(shell.astype(np.uint8), (spacing,) * 3)


def shell_equator(grid: VoxelGrid) -> int:
    return (grid.dims[2] - 1) // 2


def ct_head(outer_mm: float = 40.0, wall_mm: float = 5.0, shape=(96, 96, 96),
            bone_hu: float = 1000.0, soft_hu: float = 40.0, air_hu: float = -1000.0):
    """CT-like volume: bone shell, soft tissue inside, air outside.

    Returns ``(ct_grid, shell_mask)``.
    """
    c = [(n - 1) / 2.0 for n in shape]
    r = radial_distance(shape, c)
    shell = (r >= outer_mm - wall_mm) & (r < outer_mm)
    ct = np.full(shape, air_hu, dtype=np.float32)
    ct[r < outer_mm - wall_mm] = soft_hu
    ct[shell] = bone_hu
    return VoxelGrid(ct), shell.astype(np.uint8)


def head(shape=(96, 96, 96), center=None, brain_mm: float = 30.0, skull_mm: float = 5.0,
         fat_mm: float = 4.0, muscle_mm: float = 4.0, spacing: float = 1.0) -> LabelVolume:
    """Concentric sphere-in-shell head with lateral temporalis-like muscle pads.

    Layers from the centre outward: brain, skull, subcutaneous fat, and a
    muscle layer restricted to two lateral pads that sit posterior to the
    brain's anterior pole and above its centre.
    """
    if center is None:
        center = [(n - 1) / 2.0 for n in shape]
    sp = (spacing,) * 3
    r = radial_distance(shape, center, sp)
    labels = np.zeros(shape, dtype=np.uint8)
    r_skull = brain_mm + skull_mm
    r_fat = r_skull + fat_mm
    r_muscle = r_fat + muscle_mm
    labels[r < brain_mm] = BRAIN
    labels[(r >= brain_mm) & (r < r_skull)] = SKULL
    labels[(r >= r_skull) & (r < r_fat)] = FAT

    dx = ((np.arange(shape[0]) - center[0]) * spacing)[:, None, None]
    dy = ((np.arange(shape[1]) - center[1]) * spacing)[None, :, None]
    dz = ((np.arange(shape[2]) - center[2]) * spacing)[None, None, :]
    pads = (
        (r >= r_fat) & (r < r_muscle)
        & (np.abs(dy) > 0.6 * r_fat)
        & (dx > -0.5 * brain_mm) & (dx < 0.3 * brain_mm)
        & (dz > 0.0) & (dz < 0.6 * brain_mm)
    )
    labels[pads] = MUSCLE
    return LabelVolume.from_array(labels, sp)


def jittered_heads(n: int, seed: int = 0, shape=(96, 96, 96)) -> list[LabelVolume]:
    """``n`` head phantoms with jittered centre and layer sizes."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        center = [(s - 1) / 2.0 + rng.uniform(-2.0, 2.0) for s in shape]
        out.append(head(
            shape,
            center,
            brain_mm=rng.uniform(27.0, 31.0),
            skull_mm=rng.uniform(4.0, 6.0),
            fat_mm=rng.uniform(3.0, 5.0),
            muscle_mm=rng.uniform(3.0, 5.0),
        ))
    return out


def fat_pad_head(shape=(96, 96, 96), brain_mm: float = 28.0, skull_mm: float = 5.0,
                 pad_mm: float = 2.0) -> LabelVolume:
    """Sphere-in-shell head whose only fat is a thin anterior-superior cap.

    The cap covers the quadrant anterior to and above the centre, so its
    lower and posterior edges meet the anterior cut.  A small pitch moves
    those edges across the cut, which changes the retained fat by a much
    larger fraction than the retained skull.
    """
    c = [(n - 1) / 2.0 for n in shape]
    r = radial_distance(shape, c)
    dx = (np.arange(shape[0]) - c[0])[:, None, None]
    dz = (np.arange(shape[2]) - c[2])[None, None, :]
    outer = brain_mm + skull_mm
    labels = np.zeros(shape, dtype=np.uint8)
    labels[r < brain_mm] = BRAIN
    labels[(r >= brain_mm) & (r < outer)] = SKULL
    labels[(r >= outer) & (r < outer + pad_mm) & (dx > 0) & (dz > 0)] = FAT
    return LabelVolume.from_array(labels)


def ct_from_labels(labels: LabelVolume, bone_hu: float = 1000.0, soft_hu: float = 40.0,
                   air_hu: float = -1000.0) -> VoxelGrid:
    """CT-like intensities on the label grid: skull is bone, other tissue soft."""
    ct = np.full(labels.dims, air_hu, dtype=np.float32)
    ct[labels.data != 0] = soft_hu
    ct[labels.data == SKULL] = bone_hu
    return labels.grid.with_data(ct)


def brain_center_slice(labels: LabelVolume) -> int:
    """Axial index of the brain's centroid (rounded down)."""
    z = np.nonzero(labels.data == BRAIN)[2]
    return int(np.floor(z.mean())) if z.size else labels.dims[2] // 2


def ratings_table(n_items: int, seed: int = 0, n_raters: int = 2, agreement: float = 0.85) -> str:
    """CSV of 1..5 scores: rater 1 draws freely, others copy it with prob ``agreement``."""
    rng = np.random.default_rng(seed)
    cols = [f"rater_{k + 1}" for k in range(n_raters)]
    lines = [",".join(["item", "health_status", "tissue_class", *cols])]
    for i in range(n_items):
        first = int(rng.choice([1, 2, 3, 4, 5], p=[0.05, 0.05, 0.1, 0.3, 0.5]))
        scores = [first] + [first if rng.random() < agreement else int(rng.integers(1, 6))
                            for _ in range(n_raters - 1)]
        status = "healthy" if i % 2 == 0 else "patient"
        tissue = ("skull", "subcutaneous_fat", "muscle")[i % 3]
        lines.append(",".join([f"item-{i + 1:03d}", status, tissue, *map(str, scores)]))
    return "\n".join(lines) + "\n"
