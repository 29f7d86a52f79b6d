import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from helpers import max_relative_error, numeric_grad
from sparknet.gates import (
    GateConfig,
    GateTensor,
    gate_backward,
    harden,
    open_probability,
    sample_gates,
    sparsity_loss,
)

CFG = GateConfig(sigma=0.5)


def test_erf_against_high_precision_series():
    grid = np.linspace(-6.0, 6.0, 10_000)
    mpmath.mp.dps = 30
    exact = np.array([float(mpmath.erf(mpmath.mpf(float(v)))) for v in grid])
    assert np.max(np.abs(erf(grid) - exact)) <= 1e-7


class TestSampleGates:
    @pytest.mark.parametrize(
        "mu,eps,expected",
        [(0.2, 0.1, 0.8), (0.7, 0.0, 1.0), (-0.9, 0.2, 0.0)],
    )
    def test_examples(self, mu, eps, expected):
        g = sample_gates(np.array([mu]), CFG, noise=np.array([eps]))
        assert g.z[0] == pytest.approx(expected, abs=1e-15)
        assert g.pre_clip[0] == pytest.approx(0.5 + mu + eps)

    def test_eval_is_deterministic(self, rng):
        mu = rng.uniform(-1, 1, (4, 6))
        cfg = GateConfig(training_noise=False)
        np.testing.assert_array_equal(sample_gates(mu, cfg).z, np.clip(0.5 + mu, 0, 1))
        np.testing.assert_array_equal(sample_gates(mu, cfg).z, sample_gates(mu, cfg).z)

    def test_noise_needs_generator(self):
        with pytest.raises(ValueError):
            sample_gates(np.zeros(3), CFG)

    def test_noise_std(self):
        g = sample_gates(np.zeros(200_000) - 10.0, CFG, rng=np.random.default_rng(0))
        assert np.std(g.pre_clip) == pytest.approx(0.5, rel=0.01)

    def test_seeded_noise_reproducible(self, rng):
        mu = rng.uniform(-1, 1, (3, 5))
        a = sample_gates(mu, CFG, rng=np.random.default_rng([7, 1, 2, 3]))
        b = sample_gates(mu, CFG, rng=np.random.default_rng([7, 1, 2, 3]))
        np.testing.assert_array_equal(a.z, b.z)

    def test_unclipped_variant(self):
        cfg = GateConfig(training_noise=False, clip=False)
        g = sample_gates(np.array([0.7, -0.9]), cfg)
        np.testing.assert_allclose(g.z, [1.2, -0.4])
        np.testing.assert_array_equal(gate_backward(np.array([2.0, 3.0]), g), [2.0, 3.0])

    def test_harden(self):
        np.testing.assert_array_equal(harden(np.array([0.0, 0.5, 0.51, 1.0])), [0, 0, 1, 1])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=20), st.integers(0, 2**32 - 1))
    def test_range(self, mu, seed):
        g = sample_gates(np.array(mu), CFG, rng=np.random.default_rng(seed))
        assert np.all((g.z >= 0) & (g.z <= 1))
        np.testing.assert_array_equal(g.z, np.clip(g.pre_clip, 0, 1))


class TestGateBackward:
    def test_interior_passes(self):
        g = GateTensor(np.array([0.5]), np.array([0.5]))
        assert gate_backward(np.array([3.0]), g)[0] == 3.0

    @pytest.mark.parametrize("pre", [1.2, -0.2, 0.0, 1.0])
    def test_saturated_blocks(self, pre):
        g = GateTensor(np.clip([pre], 0, 1), np.array([pre]))
        assert gate_backward(np.array([3.0]), g)[0] == 0.0

    def test_chain_with_frozen_noise(self, rng):
        mu = rng.uniform(-1, 1, (4, 8))
        eps = rng.normal(0, 0.5, mu.shape)
        proj = rng.normal(size=mu.shape)
        g = sample_gates(mu, CFG, noise=eps)
        analytic = gate_backward(proj, g)
        num = numeric_grad(lambda: float(np.sum(proj * sample_gates(mu, CFG, noise=eps).z)), mu)
        assert max_relative_error(analytic, num) < 1e-4


class TestSparsityLoss:
    def test_half_at_minus_half(self):
        loss, _ = sparsity_loss(np.full((32, 98), -0.5), CFG)
        assert loss == 0.5

    def test_normal_cdf_oracle(self):
        mpmath.mp.dps = 30
        assert sparsity_loss(np.array([[-1.0]]), CFG)[0] == pytest.approx(float(1 - mpmath.ncdf(1)), abs=1e-12)
        assert sparsity_loss(np.array([[1.0]]), CFG)[0] == pytest.approx(float(mpmath.ncdf(3)), abs=1e-12)
        assert sparsity_loss(np.array([[-1.0]]), CFG)[0] == pytest.approx(0.15866, abs=1e-5)
        assert sparsity_loss(np.array([[1.0]]), CFG)[0] == pytest.approx(0.99865, abs=1e-5)

    def test_mean_over_entries(self, rng):
        mu = rng.uniform(-1, 1, (32, 98))
        loss, _ = sparsity_loss(mu, CFG)
        assert loss == pytest.approx(open_probability(mu, 0.5).mean(), rel=1e-14)

    def test_gradient_matches_finite_differences(self, rng):
        mu = rng.uniform(-1, 1, (4, 6))
        _, grad = sparsity_loss(mu, CFG)
        num = numeric_grad(lambda: sparsity_loss(mu, CFG)[0], mu, h=1e-5)
        assert max_relative_error(grad, num, floor=1e-12) < 1e-6

    def test_monotone_and_bounded(self):
        mu = np.linspace(-1, 1, 201)
        per_entry = open_probability(mu, 0.5)
        assert np.all(np.diff(per_entry) > 0)
        assert np.all((per_entry > 0) & (per_entry < 1))
        _, grad = sparsity_loss(mu, CFG)
        assert np.all(grad > 0)

    def test_sigma_as_float(self):
        mu = np.zeros((2, 2))
        a, b = sparsity_loss(mu, 0.5), sparsity_loss(mu, CFG)
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1], b[1])

    def test_monte_carlo_probability(self):
        rng = np.random.default_rng(99)
        n = 200_000
        for mu in (-0.8, -0.3, 0.4):
            z = sample_gates(np.full(n, mu), CFG, rng=rng).z
            p = np.mean(z > 0)
            se = math.sqrt(p * (1 - p) / n)
            assert abs(p - open_probability(mu, 0.5)) < 3 * se
