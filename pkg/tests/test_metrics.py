import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import ndimage

from cranio.errors import CodebookError, SampleSizeError, ShapeError, UndefinedDistanceError
from cranio.metrics import bland_altman, boundary, compare, dice, hd95, surface_distances
from cranio.phantoms import head
from cranio.volume import FAT, LabelVolume, VoxelGrid

from oracles import boundary_oracle, dice_oracle, percentile_linear, surface_distance_oracle


def blob_pair(shape, seed):
    rng = np.random.default_rng(seed)

    def one():
        m = ndimage.gaussian_filter(rng.normal(size=shape), 1.5) > 0.05
        if not m.any():
            m[tuple(s // 2 for s in shape)] = True
        return m

    return one(), one()


class TestDice:
    def test_identical(self):
        a = np.zeros((4, 4, 4), bool)
        a[1:3, 1:3, 1:3] = True
        assert dice(a, a) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4, 4), bool)
        b = a.copy()
        a[0, 0, 0] = b[3, 3, 3] = True
        assert dice(a, b) == 0.0

    def test_half(self):
        a = np.zeros((4, 1, 1), bool)
        b = a.copy()
        a[0:2] = True
        b[1:3] = True
        assert dice(a, b) == 0.5

    def test_both_empty(self):
        assert dice(np.zeros((2, 2, 2)), np.zeros((2, 2, 2))) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dice(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


class TestSurfaceDistances:
    def test_identical_all_zero(self):
        a, _ = blob_pair((10, 10, 10), 0)
        assert np.all(surface_distances(a, a) == 0)
        assert hd95(a, a) == 0.0

    def test_two_voxels_three_mm(self):
        a = np.zeros((7, 3, 3), bool)
        b = a.copy()
        a[1, 1, 1] = True
        b[4, 1, 1] = True
        assert sorted(surface_distances(a, b).tolist()) == [3.0, 3.0]
        assert hd95(a, b) == 3.0

    def test_spacing(self):
        a = np.zeros((3, 7, 3), bool)
        b = a.copy()
        a[1, 1, 1] = True
        b[1, 4, 1] = True
        assert surface_distances(a, b, spacing=(1.0, 0.5, 2.0)).tolist() == [1.5, 1.5]
        grid = VoxelGrid(a.astype(np.uint8), (1.0, 0.5, 2.0))
        assert hd95(grid, VoxelGrid(b.astype(np.uint8), (1.0, 0.5, 2.0))) == 1.5

    def test_empty_mask(self):
        a = np.zeros((3, 3, 3), bool)
        b = a.copy()
        b[1, 1, 1] = True
        with pytest.raises(UndefinedDistanceError):
            surface_distances(a, b)

    def test_boundary_matches_oracle(self):
        a, _ = blob_pair((12, 12, 12), 3)
        expected = np.zeros_like(a)
        for p in boundary_oracle(a):
            expected[p] = True
        assert np.array_equal(boundary(a), expected)

    @pytest.mark.parametrize("seed", range(8))
    def test_pool_matches_oracle(self, seed):
        a, b = blob_pair((12, 12, 12), seed)
        sp = (1.0, 0.8, 1.3) if seed % 2 else (1.0, 1.0, 1.0)
        got = surface_distances(a, b, sp)
        want = surface_distance_oracle(a, b, sp)
        assert np.allclose(np.sort(got), np.sort(want), atol=1e-9, rtol=0)
        assert abs(hd95(a, b, sp) - percentile_linear(want, 95)) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(
    hnp.arrays(bool, (6, 6, 6), elements=st.booleans()),
    hnp.arrays(bool, (6, 6, 6), elements=st.booleans()),
    st.tuples(*[st.integers(0, 3)] * 3),
)
def test_symmetry_and_translation(a, b, shift):
    if not a.any() or not b.any():
        return
    assert dice(a, b) == dice(b, a) == pytest.approx(dice_oracle(a, b))
    assert hd95(a, b) == hd95(b, a)

    def placed(m, offset):
        # keep a one-voxel margin so the array edge never touches the masks
        out = np.zeros((11, 11, 11), bool)
        out[tuple(slice(o + 1, o + 7) for o in offset)] = m
        return out

    a0, b0 = placed(a, (0, 0, 0)), placed(b, (0, 0, 0))
    a1, b1 = placed(a, shift), placed(b, shift)
    assert dice(a1, b1) == dice(a0, b0)
    assert hd95(a1, b1) == hd95(a0, b0)
    pool = surface_distances(a, b)
    assert hd95(a, b) <= pool.max()
    assert (dice(a, b) == 1.0) == np.array_equal(a, b)


@pytest.fixture(scope="module")
def labels():
    return head((48, 48, 48), brain_mm=12, skull_mm=3, fat_mm=3, muscle_mm=3)


class TestCompare:
    def test_identical(self, labels):
        rep = compare(labels, labels)
        assert all(c.dice == 1.0 and c.hd95_mm == 0.0 for c in rep.classes)
        assert rep.overall_dice == 1.0

    def test_shifted_class(self, labels):
        data = labels.data.copy()
        fat = data == FAT
        data[fat] = 0
        shifted = np.roll(fat, 2, axis=1)
        data[shifted & (data == 0)] = FAT
        rep = compare(labels, LabelVolume.from_array(data))
        assert rep.by_name("subcutaneous_fat").hd95_mm == pytest.approx(2.0, abs=0.5)
        assert rep.by_name("skull").hd95_mm == 0.0
        assert rep.by_name("skull").dice == 1.0

    def test_absent_class(self, labels):
        data = labels.data.copy()
        data[data == FAT] = 0
        c = compare(labels, LabelVolume.from_array(data)).by_name("subcutaneous_fat")
        assert c.dice == 0.0 and c.hd95_mm is None and not c.hd95_defined

    def test_both_empty_excluded(self, labels):
        data = labels.data.copy()
        data[data == 4] = 0
        lv = LabelVolume.from_array(data)
        rep = compare(lv, lv)
        assert rep.empty_classes == ["muscle"]
        assert rep.by_name("muscle").both_empty
        assert rep.overall_dice == 1.0

    def test_overall_is_macro_average(self, labels):
        data = labels.data.copy()
        data[data == FAT] = 0
        rep = compare(labels, LabelVolume.from_array(data))
        assert rep.overall_dice == pytest.approx(np.mean([c.dice for c in rep.classes]))

    def test_codebook_mismatch(self, labels):
        other = LabelVolume(labels.grid, {**labels.codebook, 4: "temporalis"})
        with pytest.raises(CodebookError):
            compare(labels, other)


class TestBlandAltman:
    def test_equal(self):
        r = bland_altman([1, 2, 3], [1, 2, 3])
        assert (r.bias, r.loa_low, r.loa_high) == (0, 0, 0)

    def test_constant_difference(self):
        r = bland_altman([2, 3, 4, 5], [1, 2, 3, 4])
        assert (r.bias, r.sd, r.loa_low, r.loa_high) == (1, 0, 1, 1)

    def test_two_pairs(self):
        r = bland_altman([0, 2], [0, 0])
        assert r.bias == 1.0
        assert r.sd == pytest.approx(np.sqrt(2))
        assert r.loa_low == pytest.approx(1 - 1.96 * np.sqrt(2))
        assert r.loa_high == pytest.approx(1 + 1.96 * np.sqrt(2))
        assert (round(r.loa_low, 3), round(r.loa_high, 3)) == (-1.772, 3.772)

    def test_too_few(self):
        with pytest.raises(SampleSizeError):
            bland_altman([1], [2])

    @settings(max_examples=40)
    @given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=2, max_size=30))
    def test_ordering(self, pairs):
        x, y = zip(*pairs)
        r = bland_altman(x, y)
        assert r.loa_low <= r.bias + 1e-9 and r.bias <= r.loa_high + 1e-9
