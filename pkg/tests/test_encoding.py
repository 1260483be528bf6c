"""Magnitude encoding: exact values, ranges, and structural properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlrn.encoding import MEConfig, centers, encode, encode_gaussian, encode_triangle


class TestConfig:
    def test_rejects_small_d(self):
        with pytest.raises(ValueError):
            MEConfig(d=1)

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            MEConfig(sigma=0.0)

    def test_rejects_unknown_variant(self):
        with pytest.raises(ValueError):
            MEConfig(variant="sawtooth")


class TestCenters:
    @pytest.mark.parametrize("d", [2, 3, 5, 10, 20])
    def test_span_and_formula(self, d):
        c = centers(d, dtype=np.float64)
        assert c[0] == -1.0 and c[-1] == 1.0
        expected = np.array([2.0 * j / (d - 1) - 1.0 for j in range(d)])
        assert np.allclose(c, expected, atol=1e-15)

    @pytest.mark.parametrize("d", [2, 4, 5, 7, 20])
    def test_exact_antisymmetry(self, d):
        c = centers(d, dtype=np.float64)
        assert np.array_equal(c, -c[::-1])


class TestGaussian:
    def test_left_edge_center_exact_one(self):
        out = encode_gaussian(np.array([-1.0]), MEConfig(d=5, sigma=0.22), dtype=np.float64)
        assert out[0, 0] == 1.0

    def test_spot_value_d5(self):
        # exp(-0.25 / (2 * 0.22^2)) evaluated directly
        cfg = MEConfig(d=5, sigma=0.22)
        out = encode_gaussian(np.array([0.0]), cfg, dtype=np.float64)
        assert out[0, 2] == 1.0
        expected = math.exp(-0.25 / (2.0 * cfg.sigma**2))
        assert expected == pytest.approx(0.0756, abs=1e-4)
        assert out[0, 1] == pytest.approx(expected, rel=1e-9)
        assert out[0, 3] == pytest.approx(expected, rel=1e-9)

    def test_shape_contract(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, size=6400).astype(np.float32)
        out = encode_gaussian(x, MEConfig(d=20, sigma=0.28))
        assert out.shape == (6400, 20)
        assert out.dtype == np.float32

    def test_strict_positivity(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, size=500)
        out = encode_gaussian(x, MEConfig(d=20, sigma=0.28), dtype=np.float64)
        assert np.all(out > 0.0)

    def test_clamps_rounding_excursions(self):
        out = encode_gaussian(np.array([1.0 + 5e-7]), MEConfig(d=5, sigma=0.22), dtype=np.float64)
        assert out[0, 4] == 1.0

    def test_rejects_large_excursions(self):
        with pytest.raises(ValueError, match="outside"):
            encode_gaussian(np.array([1.01]), MEConfig(d=5, sigma=0.22))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="non-finite"):
            encode_gaussian(np.array([np.nan]), MEConfig(d=5, sigma=0.22))


class TestTriangle:
    def test_peak_and_support(self):
        cfg = MEConfig(d=5, sigma=0.22, variant="triangle")
        c = centers(5, np.float64)
        for j in range(5):
            out = encode_triangle(np.array([c[j]]), cfg, dtype=np.float64)[0]
            assert out[j] == 1.0
            for k in range(5):
                if abs(k - j) >= 2:
                    assert out[k] == 0.0

    def test_midpoint_between_centers(self):
        cfg = MEConfig(d=5, variant="triangle")
        c = centers(5, np.float64)
        x = (c[1] + c[2]) / 2.0
        out = encode_triangle(np.array([x]), cfg, dtype=np.float64)[0]
        assert out[1] == pytest.approx(0.5, abs=1e-12)
        assert out[2] == pytest.approx(0.5, abs=1e-12)

    @given(st.floats(min_value=-1.0, max_value=1.0, allow_nan=False))
    @settings(max_examples=100, deadline=None)
    def test_d2_partition_of_unity(self, x):
        out = encode_triangle(np.array([x]), MEConfig(d=2, variant="triangle"), dtype=np.float64)[0]
        assert out.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("variant", ["gaussian", "triangle"])
class TestSharedProperties:
    @given(data=st.data())
    @settings(max_examples=60, deadline=None)
    def test_range_and_peak_location(self, variant, data):
        d = data.draw(st.integers(min_value=2, max_value=24))
        x = data.draw(
            st.lists(st.floats(min_value=-1.0, max_value=1.0, allow_nan=False), min_size=1, max_size=16)
        )
        cfg = MEConfig(d=d, sigma=0.3, variant=variant)
        out = encode(np.array(x), cfg, dtype=np.float64)
        assert np.all(out >= 0.0) and np.all(out <= 1.0)
        c = centers(d, np.float64)
        for i, xi in enumerate(x):
            nearest = int(np.argmin(np.abs(xi - c)))
            assert int(np.argmax(out[i])) == nearest

    @given(data=st.data())
    @settings(max_examples=60, deadline=None)
    def test_mirror_symmetry(self, variant, data):
        d = data.draw(st.integers(min_value=2, max_value=24))
        x = data.draw(
            st.lists(st.floats(min_value=-1.0, max_value=1.0, allow_nan=False), min_size=1, max_size=16)
        )
        cfg = MEConfig(d=d, sigma=0.25, variant=variant)
        arr = np.array(x)
        forward = encode(arr, cfg, dtype=np.float64)
        mirrored = encode(-arr, cfg, dtype=np.float64)
        assert np.array_equal(mirrored, forward[:, ::-1])

    def test_exactness_at_every_center(self, variant):
        for d in (2, 5, 8, 20):
            cfg = MEConfig(d=d, sigma=0.28, variant=variant)
            c = centers(d, np.float64)
            out = encode(c, cfg, dtype=np.float64)
            assert np.array_equal(np.diag(out), np.ones(d))
