import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from terraseg.errors import ParameterError, ShapeError
from terraseg.tensor import (
    SeededRng,
    Tensor,
    concat_channels,
    crop_center,
    flatten,
    mix_seed,
    pad_zero,
    reshape,
    tensor_new,
    tensor_random,
)

small_shapes = st.lists(st.integers(1, 5), min_size=1, max_size=4).map(tuple)


class TestConstruction:
    def test_fill(self):
        t = tensor_new((2, 2), 0.0)
        assert t.shape == (2, 2)
        assert np.all(t.data == 0.0)

    def test_tile_shaped(self):
        t = tensor_new((4, 256, 256))
        assert t.shape == (4, 256, 256)
        u = tensor_new((21, 9, 9), 1.0)
        assert u.size == 21 * 81 and np.all(u.data == 1.0)

    def test_zero_extent_rejected(self):
        with pytest.raises(ShapeError):
            tensor_new((0, 3))
        with pytest.raises(ShapeError):
            tensor_new((3, -1))
        with pytest.raises(ShapeError):
            tensor_new(())

    def test_wraps_without_copy_when_conforming(self):
        arr = np.zeros((2, 3))
        t = Tensor(arr)
        assert t.data is arr

    def test_coerces_dtype(self):
        t = Tensor(np.zeros((2, 2), dtype=np.float32))
        assert t.data.dtype == np.float64


class TestRandom:
    def test_same_seed_bit_identical(self):
        a = tensor_random((3, 4), SeededRng(42))
        b = tensor_random((3, 4), SeededRng(42))
        assert np.array_equal(a.data, b.data)

    def test_different_seed_differs(self):
        a = tensor_random((3, 4), SeededRng(42))
        b = tensor_random((3, 4), SeededRng(43))
        assert np.any(a.data != b.data)

    def test_range(self):
        t = tensor_random((1,), SeededRng(0))
        assert 0.0 <= t.data[0] < 1.0

    def test_bad_range(self):
        with pytest.raises(ParameterError):
            tensor_random((2,), SeededRng(0), low=1.0, high=1.0)


class TestCropPadConcat:
    def test_crop_symmetric_center(self):
        t = Tensor(np.arange(36, dtype=float).reshape(1, 6, 6))
        c = crop_center(t, 4, 4)
        assert np.array_equal(c.data, t.data[:, 1:5, 1:5])

    def test_crop_floor_rule(self):
        t = Tensor(np.arange(75, dtype=float).reshape(3, 5, 5))
        c = crop_center(t, 4, 4)
        assert np.array_equal(c.data, t.data[:, 0:4, 0:4])

    def test_crop_identity(self):
        t = Tensor(np.arange(16, dtype=float).reshape(1, 4, 4))
        assert np.array_equal(crop_center(t, 4, 4).data, t.data)

    def test_crop_too_large(self):
        with pytest.raises(ShapeError):
            crop_center(tensor_new((1, 4, 4)), 5, 4)

    def test_concat_extent_arithmetic(self):
        c = concat_channels(tensor_new((2, 4, 4), 1.0), tensor_new((3, 4, 4), 2.0))
        assert c.shape == (5, 4, 4)
        assert np.all(c.data[:2] == 1.0) and np.all(c.data[2:] == 2.0)

    def test_concat_spatial_mismatch(self):
        with pytest.raises(ShapeError):
            concat_channels(tensor_new((2, 4, 4)), tensor_new((2, 5, 4)))

    def test_concat_slice_recovers_first(self):
        a = tensor_random((2, 3, 3), SeededRng(7))
        b = tensor_random((4, 3, 3), SeededRng(8))
        c = concat_channels(a, b)
        assert np.array_equal(c.data[: a.shape[0]], a.data)

    def test_pad_zero_counts(self):
        p = pad_zero(tensor_new((1, 2, 2), 1.0), 1, 1)
        assert p.shape == (1, 4, 4)
        assert (p.data == 0).sum() == 12
        assert p.data.sum() == 4.0

    def test_pad_zero_identity(self):
        t = tensor_random((2, 3, 3), SeededRng(1))
        assert np.array_equal(pad_zero(t, 0, 0).data, t.data)

    @given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 2**16))
    def test_pad_preserves_sum(self, ph, pw, seed):
        t = tensor_random((2, 3, 4), SeededRng(seed))
        assert pad_zero(t, ph, pw).data.sum() == pytest.approx(t.data.sum())

    @given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**16))
    def test_crop_undoes_pad(self, c, h, w, seed):
        t = tensor_random((c, h, w), SeededRng(seed))
        padded = pad_zero(t, 2, 1)
        assert np.array_equal(crop_center(padded, h, w).data, t.data)


class TestReshape:
    @given(small_shapes, st.integers(0, 2**16))
    def test_flatten_reshape_roundtrip(self, shape, seed):
        t = tensor_random(shape, SeededRng(seed))
        assert np.array_equal(reshape(flatten(t), shape).data, t.data)

    def test_size_mismatch(self):
        with pytest.raises(ShapeError):
            reshape(tensor_new((2, 3)), (4, 2))


class TestSeeding:
    def test_mix_seed_deterministic(self):
        assert mix_seed(1, "epoch", 3) == mix_seed(1, "epoch", 3)

    def test_mix_seed_order_sensitive(self):
        assert mix_seed(1, 2) != mix_seed(2, 1)

    @given(st.integers(0, 2**64 - 1))
    def test_mix_seed_in_range(self, v):
        assert 0 <= mix_seed(v) < 2**64

    @given(st.integers(0, 2**20), st.integers(0, 2**20))
    def test_mix_seed_part_separation(self, a, b):
        if a != b:
            assert mix_seed(a, "x") != mix_seed(b, "x")

    def test_spawn_independent_streams(self):
        root = SeededRng(5)
        a = root.spawn("a").uniform(0, 1, (8,))
        b = root.spawn("b").uniform(0, 1, (8,))
        a2 = SeededRng(5).spawn("a").uniform(0, 1, (8,))
        assert np.array_equal(a, a2)
        assert not np.array_equal(a, b)

    def test_permutation_and_integers_repeat(self):
        assert np.array_equal(SeededRng(9).permutation(10), SeededRng(9).permutation(10))
        assert np.array_equal(
            SeededRng(9).integers(0, 100, (5,)), SeededRng(9).integers(0, 100, (5,))
        )

    def test_non_integer_seed_rejected(self):
        with pytest.raises(ParameterError):
            SeededRng("nope")
        with pytest.raises(ParameterError):
            SeededRng(True)
