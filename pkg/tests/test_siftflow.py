import numpy as np
import pytest

from docrect import siftflow
from docrect.errors import ParameterError, ShapeError
from docrect.imaging import _lowpass_axis
from docrect.sift import dense_sift
from docrect.siftflow import DisplacementField, MatchConfig, match_energy, sift_flow_match


def textured_image(h, w, seed=0):
    rng = np.random.default_rng(seed)
    img = rng.random((h, w)).astype(np.float32)
    img = _lowpass_axis(_lowpass_axis(img, 0), 1)
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo)


def shift_image(img, dx):
    """Content moved right by dx pixels; left band replicates the edge."""
    out = np.empty_like(img)
    if dx >= 0:
        out[:, dx:] = img[:, : img.shape[1] - dx]
        out[:, :dx] = img[:, :1]
    else:
        out[:, :dx] = img[:, -dx:]
        out[:, dx:] = img[:, -1:]
    return out


class TestDenseSift:
    def test_constant_image(self):
        img = np.full((20, 20), 0.5, np.float32)
        d = dense_sift(img)
        assert d.shape == (20, 20, 128)
        np.testing.assert_allclose(d, 1.0 / np.sqrt(128), atol=1e-6)
        # identical at every pixel
        assert np.all(d == d[0, 0])

    def test_determinism(self):
        img = textured_image(32, 32, seed=1)
        a = dense_sift(img)
        b = dense_sift(img.copy())
        np.testing.assert_array_equal(a, b)

    def test_unit_norm_and_nonnegative(self):
        img = textured_image(40, 30, seed=2)
        d = dense_sift(img)
        norms = np.linalg.norm(d, axis=2)
        np.testing.assert_allclose(norms, 1.0, atol=1e-4)
        assert d.min() >= 0.0

    def test_shift_equivariance(self):
        img = textured_image(48, 48, seed=3)
        rolled = np.roll(img, 3, axis=1)
        da = dense_sift(img)
        db = dense_sift(rolled)
        # interior: descriptor at (y, x+3) of the rolled image equals (y, x)
        region = (slice(10, 38), slice(10, 35))
        diff = np.abs(db[:, 3:, :][region] - da[:, :-3, :][region])
        assert diff.max() < 1e-4

    def test_too_small_rejected(self):
        with pytest.raises(ParameterError, match="descriptor window"):
            dense_sift(np.zeros((8, 40), np.float32))


class TestSiftFlowMatch:
    def test_self_match_zero(self):
        d = dense_sift(textured_image(40, 40, seed=4))
        f = sift_flow_match(d, d)
        np.testing.assert_array_equal(f.dx, 0)
        np.testing.assert_array_equal(f.dy, 0)

    def test_translation_recovery(self):
        img = textured_image(64, 64, seed=5)
        da = dense_sift(img)
        db = dense_sift(shift_image(img, 3))
        f = sift_flow_match(da, db)
        interior = (slice(12, -12), slice(12, -12))
        exact = (f.dx[interior] == 3) & (f.dy[interior] == 0)
        assert exact.mean() >= 0.95
        assert np.median(f.dx[interior]) == 3

    def test_noise_pair_within_bound(self):
        rng = np.random.default_rng(6)
        a = rng.random((32, 32, 128)).astype(np.float32)
        b = rng.random((32, 32, 128)).astype(np.float32)
        # normalize as descriptor grids
        a /= np.linalg.norm(a, axis=2, keepdims=True)
        b /= np.linalg.norm(b, axis=2, keepdims=True)
        f = sift_flow_match(a, b)
        levels = 1 + max(
            0, int(np.floor(np.log2(32 / MatchConfig().min_pyramid_dim)))
        )
        bound = siftflow.displacement_bound(levels, MatchConfig())
        assert np.abs(f.dx).max() <= bound
        assert np.abs(f.dy).max() <= bound

    def test_energy_not_worse_than_zero_field(self):
        img = textured_image(48, 48, seed=7)
        da = dense_sift(img)
        db = dense_sift(shift_image(img, 2))
        f = sift_flow_match(da, db)
        zero = DisplacementField(np.zeros((48, 48), np.int32), np.zeros((48, 48), np.int32))
        assert match_energy(da, db, f) <= match_energy(da, db, zero)

    def test_determinism(self):
        img = textured_image(40, 40, seed=8)
        da = dense_sift(img)
        db = dense_sift(shift_image(img, 1))
        f1 = sift_flow_match(da, db)
        f2 = sift_flow_match(da, db)
        np.testing.assert_array_equal(f1.dx, f2.dx)
        np.testing.assert_array_equal(f1.dy, f2.dy)

    def test_size_mismatch(self):
        a = np.zeros((20, 20, 128), np.float32)
        b = np.zeros((20, 24, 128), np.float32)
        with pytest.raises(ShapeError):
            sift_flow_match(a, b)
