import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from cranio.errors import (
    CodebookError,
    DegenerateVolumeError,
    OrientationError,
    PreconditionError,
    ShapeError,
)
from cranio.phantoms import radial_distance
from cranio.volume import (
    CANONICAL_CODEBOOK,
    LabelVolume,
    VoxelGrid,
    _pull_back,
    canonical_affine,
    canonicalize,
    class_mask,
    code_of,
    orientation_of,
    resample_isotropic,
    rotate_labels,
)


def _affine(columns, origin=(0.0, 0.0, 0.0)):
    a = np.eye(4)
    a[:3, :3] = np.array(columns, dtype=float).T
    a[:3, 3] = origin
    return a


RAS_R, RAS_A, RAS_S = (1, 0, 0), (0, 1, 0), (0, 0, 1)


class TestVoxelGrid:
    def test_default_affine_is_canonical(self):
        g = VoxelGrid(np.zeros((2, 3, 4)), (1.0, 2.0, 3.0))
        assert orientation_of(g.affine).is_canonical
        assert g.spacing == (1.0, 2.0, 3.0)
        assert g.voxel_volume_mm3 == 6.0

    def test_spacing_from_affine(self):
        g = VoxelGrid(np.zeros((2, 2, 2)), affine=_affine([(0, 2, 0), (3, 0, 0), (0, 0, 0.5)]))
        assert g.spacing == (2.0, 3.0, 0.5)

    def test_data_is_read_only_copy(self):
        src = np.zeros((2, 2, 2))
        g = VoxelGrid(src)
        src[0, 0, 0] = 5
        assert g.data[0, 0, 0] == 0
        with pytest.raises(ValueError):
            g.data[0, 0, 0] = 1

    @pytest.mark.parametrize("bad", [np.zeros((2, 2)), np.zeros((0, 2, 2))])
    def test_rejects_bad_shapes(self, bad):
        with pytest.raises((ShapeError, DegenerateVolumeError)):
            VoxelGrid(bad)

    def test_rejects_singular_affine(self):
        with pytest.raises(OrientationError):
            VoxelGrid(np.zeros((2, 2, 2)), affine=_affine([(1, 0, 0), (1, 0, 0), (0, 0, 1)]))

    def test_rejects_nonpositive_spacing(self):
        with pytest.raises(ShapeError):
            VoxelGrid(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0), np.eye(4))

    def test_world_voxel_round_trip(self):
        aff = _affine([(0, 1.5, 0.1), (0.9, 0, 0), (0, -0.2, 2.0)], origin=(10, -4, 7))
        g = VoxelGrid(np.zeros((3, 4, 5)), affine=aff)
        ijk = np.array([[0, 0, 0], [2, 3, 4], [1.5, 0.25, 3]])
        assert np.allclose(g.world_to_voxel(g.voxel_to_world(ijk)), ijk, atol=1e-12)


class TestLabelVolume:
    def test_rejects_unknown_codes(self):
        with pytest.raises(CodebookError):
            LabelVolume.from_array(np.full((2, 2, 2), 9, np.uint8))

    def test_rejects_float_data(self):
        with pytest.raises(CodebookError):
            LabelVolume.from_array(np.zeros((2, 2, 2), np.float32))

    def test_canonical_codebook(self):
        lv = LabelVolume.from_array(np.zeros((1, 1, 1), np.uint8))
        assert lv.codebook == {0: "background", 1: "brain", 2: "skull", 3: "subcutaneous_fat", 4: "muscle"}
        assert code_of(lv, "muscle") == 4


class TestCanonicalize:
    def test_identity_for_canonical(self):
        g = VoxelGrid(np.arange(8.0).reshape(2, 2, 2))
        c = canonicalize(g)
        assert np.array_equal(c.data, g.data)
        assert np.array_equal(c.affine, g.affine)

    def test_flipped_first_axis(self):
        # 2x1x1: first axis runs posterior; values [a, b] come back as [b, a]
        aff = _affine([(0, -1, 0), RAS_R, RAS_S])
        g = VoxelGrid(np.array([10.0, 20.0]).reshape(2, 1, 1), affine=aff)
        c = canonicalize(g)
        assert c.data.ravel().tolist() == [20.0, 10.0]
        assert np.array_equal(c.affine[:3, 0], [0, 1, 0])
        # new voxel 0 is old voxel 1, which sat 1 mm posterior of the origin
        assert np.array_equal(c.affine[:3, 3], [0, -1, 0])
        assert orientation_of(c.affine).is_canonical

    def test_permuted_axes(self):
        # stored as (S, A, R) with distinct values; canonical view is (A, R, S)
        canon = np.arange(6.0).reshape(2, 3, 1)
        stored = canon.transpose(2, 0, 1)  # shape (1, 2, 3)
        g = VoxelGrid(stored, affine=_affine([RAS_S, RAS_A, RAS_R]))
        c = canonicalize(g)
        assert c.dims == (2, 3, 1)
        assert np.array_equal(c.data, canon)

    def test_world_positions_preserved(self):
        aff = _affine([(0, 0, -2.0), (-1.0, 0, 0), (0, 1.5, 0)], origin=(5, 6, 7))
        data = np.random.default_rng(0).normal(size=(3, 4, 5))
        g = VoxelGrid(data, affine=aff)
        c = canonicalize(g)
        assert c.spacing == (1.5, 1.0, 2.0)
        for ijk in itertools.product(range(3), range(4), range(5)):
            w = g.voxel_to_world(ijk)
            new = np.rint(c.world_to_voxel(w)).astype(int)
            assert c.data[tuple(new)] == data[ijk]

    @settings(max_examples=40, deadline=None)
    @given(st.permutations([0, 1, 2]), st.tuples(*[st.sampled_from([1, -1])] * 3))
    def test_idempotent(self, perm, signs):
        cols = [tuple(s * (1.0 if k == w else 0.0) for k in range(3)) for w, s in zip(perm, signs)]
        data = np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4)
        once = canonicalize(VoxelGrid(data, affine=_affine(cols)))
        twice = canonicalize(once)
        assert orientation_of(once.affine).is_canonical
        assert np.array_equal(once.data, twice.data)
        assert np.array_equal(once.affine, twice.affine)

    def test_oblique_affine_rounds_to_nearest_axes(self):
        th = np.deg2rad(20)
        cols = [(0, np.cos(th), np.sin(th)), (1, 0, 0), (0, -np.sin(th), np.cos(th))]
        assert orientation_of(_affine(cols)).axes == ("A", "R", "S")


def _resample_oracle(grid: VoxelGrid, target: float) -> np.ndarray:
    # each output centre sits (k + 0.5) * target mm from the shared outer
    # corner; the nearest input centre is round-half-up of (mm / s - 0.5)
    n_out = [int(round(n * s / target)) for n, s in zip(grid.dims, grid.spacing)]
    out = np.zeros(n_out, dtype=grid.data.dtype)
    for ijk in itertools.product(*map(range, n_out)):
        src = []
        for k, s, n in zip(ijk, grid.spacing, grid.dims):
            mm = (k + 0.5) * target
            src.append(min(max(int(np.floor(mm / s - 0.5 + 0.5)), 0), n - 1))
        out[ijk] = grid.data[tuple(src)]
    return out


class TestResample:
    def test_identity_at_target(self):
        g = VoxelGrid(np.random.default_rng(1).integers(0, 5, (4, 5, 6)))
        r = resample_isotropic(g, 1.0, "nearest")
        assert np.array_equal(r.data, g.data)
        assert np.allclose(r.affine, g.affine)

    @pytest.mark.parametrize("mode", ["nearest", "trilinear"])
    def test_constant_upsample(self, mode):
        g = VoxelGrid(np.full((4, 4, 4), 3.7), (2.0, 2.0, 2.0))
        r = resample_isotropic(g, 1.0, mode)
        assert r.dims == (8, 8, 8)
        assert r.spacing == (1.0, 1.0, 1.0)
        assert np.all(r.data == 3.7)

    @settings(max_examples=30, deadline=None)
    @given(
        st.floats(-1e6, 1e6, allow_nan=False),
        st.tuples(*[st.sampled_from([0.5, 0.7, 1.0, 1.3, 2.0])] * 3),
        st.sampled_from([0.6, 1.0, 1.5]),
        st.sampled_from(["nearest", "trilinear"]),
    )
    def test_constant_field_any_mode(self, value, spacing, target, mode):
        g = VoxelGrid(np.full((3, 4, 5), value), spacing)
        assert np.all(resample_isotropic(g, target, mode).data == value)

    def test_cube_downsample_matches_oracle(self):
        data = np.zeros((20, 20, 20), np.uint8)
        data[5:15, 5:15, 5:15] = 2
        lv = LabelVolume.from_array(data)
        r = resample_isotropic(lv, 2.0)
        assert set(np.unique(r.data)) <= {0, 2}
        assert np.array_equal(r.data, _resample_oracle(lv.grid, 2.0))
        assert int((r.data == 2).sum()) == 5 ** 3

    def test_anisotropic_matches_oracle(self):
        data = np.random.default_rng(4).integers(0, 5, (5, 7, 3)).astype(np.uint8)
        g = VoxelGrid(data, (1.2, 0.8, 2.5))
        r = resample_isotropic(g, 1.0)
        assert np.array_equal(r.data, _resample_oracle(g, 1.0))

    def test_extent_preserved(self):
        g = VoxelGrid(np.zeros((7, 9, 5)), (1.3, 0.9, 2.1))
        r = resample_isotropic(g, 0.5)
        for n_in, s_in, n_out in zip(g.dims, g.spacing, r.dims):
            assert abs(n_in * s_in - n_out * 0.5) <= 0.5

    def test_output_grid_shares_outer_corner(self):
        g = VoxelGrid(np.zeros((4, 4, 4)), (2.0, 2.0, 2.0))
        r = resample_isotropic(g, 1.0)
        assert np.allclose(r.voxel_to_world([-0.5] * 3), g.voxel_to_world([-0.5] * 3))

    def test_bad_target(self):
        with pytest.raises(PreconditionError):
            resample_isotropic(VoxelGrid(np.zeros((2, 2, 2))), 0.0)


def _sphere_labels(radius=20, shape=(48, 48, 48)):
    c = [(n - 1) / 2 for n in shape]
    data = (radial_distance(shape, c) < radius).astype(np.uint8) * 2
    return LabelVolume.from_array(data)


class TestRotate:
    def test_zero_pitch_identity(self):
        lv = _sphere_labels(10, (24, 24, 24))
        assert np.array_equal(rotate_labels(lv, 0.0).data, lv.data)

    def test_off_centre_voxel_quarter_turn(self):
        # voxels at x=2 and x=4 (z=2); centroid (3, 0, 2).  A quarter turn sends
        # the anterior voxel to the superior side and the posterior one below.
        a = np.zeros((5, 1, 5), np.uint8)
        a[2, 0, 2] = 3
        a[4, 0, 2] = 2
        out = _pull_back(LabelVolume.from_array(a), 90.0).data
        assert out[3, 0, 3] == 2
        assert out[3, 0, 1] == 3
        assert np.count_nonzero(out) == 2

    def test_sphere_count_change_small(self):
        lv = _sphere_labels()
        n0 = int((lv.data == 2).sum())
        n1 = int((rotate_labels(lv, 5.0).data == 2).sum())
        assert abs(n1 - n0) / n0 < 0.03

    def test_bounds(self):
        lv = _sphere_labels(5, (12, 12, 12))
        with pytest.raises(PreconditionError):
            rotate_labels(lv, 31.0)
        with pytest.raises(DegenerateVolumeError):
            rotate_labels(LabelVolume.from_array(np.zeros((3, 3, 3), np.uint8)), 5.0)

    @settings(max_examples=25, deadline=None)
    @given(
        hnp.arrays(np.uint8, (6, 5, 6), elements=st.sampled_from([0, 0, 0, 2, 3])),
        st.floats(-30, 30),
    )
    def test_no_new_codes(self, data, pitch):
        if not data.any():
            data[0, 0, 0] = 2
        lv = LabelVolume.from_array(data)
        out = rotate_labels(lv, pitch)
        assert set(np.unique(out.data)) <= set(np.unique(data)) | {0}
        assert out.dims == lv.dims and out.spacing == lv.spacing


class TestClassMask:
    def test_all_background(self):
        lv = LabelVolume.from_array(np.zeros((3, 3, 3), np.uint8))
        assert not class_mask(lv, 2).data.any()

    def test_popcount(self):
        data = np.zeros((4, 4, 4), np.uint8)
        data.flat[[1, 5, 9, 33, 63]] = 4
        assert int(class_mask(LabelVolume.from_array(data), 4).data.sum()) == 5

    def test_hand_enumerated_2x2x2(self):
        data = np.array([[[0, 1], [2, 3]], [[4, 2], [2, 0]]], np.uint8)
        m = class_mask(LabelVolume.from_array(data, (0.5, 0.5, 0.5)), 2).data
        assert m.tolist() == [[[0, 0], [1, 0]], [[0, 1], [1, 0]]]
        assert m.dtype == np.uint8

    def test_unknown_code(self):
        with pytest.raises(CodebookError):
            class_mask(LabelVolume.from_array(np.zeros((2, 2, 2), np.uint8)), 7)

    @settings(max_examples=30, deadline=None)
    @given(hnp.arrays(np.uint8, hnp.array_shapes(min_dims=3, max_dims=3, max_side=6),
                      elements=st.integers(0, 4)))
    def test_popcounts_partition_volume(self, data):
        lv = LabelVolume.from_array(data)
        total = sum(int(class_mask(lv, c).data.sum()) for c in CANONICAL_CODEBOOK)
        assert total == data.size


def test_canonical_affine_matches_orientation():
    assert orientation_of(canonical_affine((1, 2, 3))).axes == ("A", "R", "S")
