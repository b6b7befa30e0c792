"""
Unit tests for the pushforward module.

These tests validate the mixing-weight parameterization, exact enforcement of
the initial data, the initial decompositions and the signed estimator.
"""

import unittest
import os
import sys

import numpy as np

# Import from parent directory
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from phase_core import DimensionMismatchError, EmptyBatchError, PhaseBatch, PhasePoint, PhysicalConstants, RandomStreams
from potentials import UnknownNameError
from pushforward import (ALPHA_FLOOR, AnalyticFlowGenerator, NegativeTimeError, SignedPushforward,
                         build_decomposition, inverse_softplus, sample_batch, signed_contributions,
                         signed_expectation, softplus, softplus_slope, wigner_negativity_weight)


def _perturbed(dim=1, seed=0, alpha0=0.5):
    rng = np.random.default_rng(seed)
    sp = SignedPushforward.create(dim, rng, hidden=(6, 6), alpha0=alpha0)
    groups = sp.parameter_groups()
    for branch in ("plus", "minus"):
        groups[branch] = {k: v + 0.3 * rng.standard_normal(v.shape) for k, v in groups[branch].items()}
    return sp.with_groups(groups)


class TestMixingWeight(unittest.TestCase):
    """Test suite for the softplus parameterization of alpha."""

    def test_inverse_softplus(self):
        for alpha in (1e-3, 0.3, 1.0, 12.0):
            self.assertAlmostEqual(softplus(inverse_softplus(alpha)), alpha, places=10)
        self.assertEqual(inverse_softplus(0.0), -np.inf)
        self.assertEqual(softplus(-np.inf), 0.0)

    def test_negative_alpha_rejected(self):
        with self.assertRaises(ValueError):
            inverse_softplus(-0.1)

    def test_signed_mass_is_one(self):
        sp = _perturbed()
        for raw in (-20.0, -3.0, 0.0, 2.0, 15.0):
            sp.alpha_raw = raw
            self.assertAlmostEqual(sp.alpha_plus - sp.alpha_minus, 1.0, places=12)
            self.assertGreaterEqual(sp.alpha_minus, 0.0)

    def test_negativity_weight_reports_alpha(self):
        sp = _perturbed(alpha0=0.25)
        self.assertAlmostEqual(wigner_negativity_weight(sp), 0.25, places=10)
        sp.alpha_raw = -np.inf
        self.assertEqual(wigner_negativity_weight(sp), 0.0)

    def test_learnable_alpha_starts_off_zero(self):
        learnable = SignedPushforward.create(1, np.random.default_rng(0), hidden=(4,), alpha0=0.0)
        self.assertTrue(np.isfinite(learnable.alpha_raw))
        self.assertGreater(softplus_slope(learnable.alpha_raw), 0.0)
        self.assertAlmostEqual(learnable.alpha, ALPHA_FLOOR, delta=1e-12)
        frozen = SignedPushforward.create(1, np.random.default_rng(0), hidden=(4,), alpha0=0.0,
                                          freeze_alpha=True)
        self.assertEqual(frozen.alpha, 0.0)
        self.assertEqual(softplus_slope(frozen.alpha_raw), 0.0)


class TestSignedPushforward(unittest.TestCase):
    """Test suite for the two-branch generator."""

    def test_identity_at_time_zero(self):
        sp = _perturbed(dim=2)
        rng = np.random.default_rng(3)
        x0, p0 = rng.standard_normal((50, 2)), rng.standard_normal((50, 2))
        z = rng.standard_normal((50, sp.d_base))
        for branch in ("plus", "minus"):
            pushed = sp.push_batch(branch, np.zeros(50), x0, p0, z)
            np.testing.assert_array_equal(pushed.x, x0)
            np.testing.assert_array_equal(pushed.p, p0)

    def test_fresh_generator_is_identity(self):
        sp = SignedPushforward.create(1, np.random.default_rng(1), hidden=(4,))
        moved = sp.push("plus", 0.7, PhasePoint([1.0], [-2.0]), np.zeros(sp.d_base))
        np.testing.assert_array_equal(moved.x, [1.0])
        np.testing.assert_array_equal(moved.p, [-2.0])

    def test_positive_time_moves_points(self):
        sp = _perturbed()
        moved = sp.push("plus", 0.5, PhasePoint([0.3], [0.1]), np.ones(sp.d_base))
        self.assertFalse(np.allclose(np.concatenate([moved.x, moved.p]), [0.3, 0.1]))

    def test_negative_time(self):
        sp = _perturbed()
        with self.assertRaises(NegativeTimeError):
            sp.push("plus", -0.1, PhasePoint([0.0], [0.0]), np.zeros(sp.d_base))

    def test_noise_width(self):
        sp = _perturbed()
        with self.assertRaises(DimensionMismatchError):
            sp.push("plus", 0.1, PhasePoint([0.0], [0.0]), np.zeros(sp.d_base + 1))

    def test_minus_branch_skipped_when_frozen_at_zero(self):
        sp = SignedPushforward.create(1, np.random.default_rng(2), hidden=(4,), freeze_alpha=True)
        self.assertFalse(sp.uses_minus_branch)
        decomp = build_decomposition("coherent", 1, PhysicalConstants())
        sample = sample_batch(sp, decomp, np.full(8, 0.2), RandomStreams(0))
        self.assertIsNone(sample.minus)

    def test_with_groups_copies(self):
        sp = _perturbed()
        other = sp.copy()
        other.params_plus.weights[0][0, 0] += 1.0
        self.assertNotEqual(other.params_plus.weights[0][0, 0], sp.params_plus.weights[0][0, 0])


class TestSampling(unittest.TestCase):
    """Test suite for sample_batch and the signed estimator."""

    def test_time_zero_returns_initial_draws(self):
        sp = _perturbed()
        decomp = build_decomposition("coherent", 1, PhysicalConstants())
        streams = RandomStreams(11)
        sample = sample_batch(sp, decomp, np.zeros(20), streams)
        x0, p0 = decomp.sample_plus(20, streams.generator("init_plus"))
        np.testing.assert_array_equal(sample.plus.x, x0)
        np.testing.assert_array_equal(sample.plus.p, p0)

    def test_reproducible(self):
        sp = _perturbed()
        decomp = build_decomposition("coherent", 1, PhysicalConstants())
        first = sample_batch(sp, decomp, np.full(16, 0.4), RandomStreams(5))
        second = sample_batch(sp, decomp, np.full(16, 0.4), RandomStreams(5))
        np.testing.assert_array_equal(first.minus.x, second.minus.x)

    def test_empty_batch(self):
        sp = _perturbed()
        decomp = build_decomposition("coherent", 1, PhysicalConstants())
        with self.assertRaises(EmptyBatchError):
            sample_batch(sp, decomp, np.zeros(0), RandomStreams(0))

    def test_signed_expectation_of_constant(self):
        rng = np.random.default_rng(0)
        plus = PhaseBatch(np.zeros(10), rng.standard_normal((10, 1)), rng.standard_normal((10, 1)), 1.0)
        minus = PhaseBatch(np.zeros(10), rng.standard_normal((10, 1)), rng.standard_normal((10, 1)), 1.0)
        value = signed_expectation(plus, minus, 1.7, 0.7, lambda t, x, p: np.ones(t.shape))
        self.assertAlmostEqual(float(value), 1.0, places=12)

    def test_signed_contributions(self):
        plus, minus = np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.5, 0.0], [1.0, -1.0]])
        np.testing.assert_allclose(signed_contributions(plus, minus, 1.5, 0.5),
                                   [[1.25, 3.0], [4.0, 6.5]])
        np.testing.assert_array_equal(signed_contributions(plus, None, 1.0, 0.0), plus)

    def test_length_mismatch(self):
        plus = PhaseBatch(np.zeros(3), np.zeros((3, 1)), np.zeros((3, 1)), 1.0)
        minus = PhaseBatch(np.zeros(2), np.zeros((2, 1)), np.zeros((2, 1)), 1.0)
        with self.assertRaises(DimensionMismatchError):
            signed_expectation(plus, minus, 1.5, 0.5, lambda t, x, p: x[:, 0])


class TestDecompositions(unittest.TestCase):
    """Test suite for the prescribed initial splits."""

    def test_coherent_moments(self):
        consts = PhysicalConstants(hbar=0.5)
        decomp = build_decomposition("coherent", 1, consts, {"x0": 2.0, "p0": -1.0})
        x, p = decomp.sample_plus(40000, np.random.default_rng(0))
        self.assertTrue(decomp.nonnegative)
        self.assertAlmostEqual(float(x.mean()), 2.0, delta=0.02)
        self.assertAlmostEqual(float(p.mean()), -1.0, delta=0.02)
        self.assertAlmostEqual(float(x.var()), 0.25, delta=0.01)
        self.assertAlmostEqual(float(p.var()), 0.25, delta=0.01)

    def test_excited_weight(self):
        decomp = build_decomposition("excited", 1, PhysicalConstants())
        self.assertAlmostEqual(decomp.alpha0, 2.0 * np.exp(-0.5) - 1.0, places=3)
        self.assertFalse(decomp.nonnegative)

    def test_excited_branches_have_expected_radii(self):
        decomp = build_decomposition("excited", 1, PhysicalConstants())
        rng = np.random.default_rng(4)
        xp, pp = decomp.sample_plus(5000, rng)
        xm, pm = decomp.sample_minus(5000, rng)
        self.assertTrue(np.all(xm ** 2 + pm ** 2 < 0.5 + 1e-12))
        self.assertTrue(np.all(xp ** 2 + pp ** 2 > 0.5 - 1e-12))

    def test_signed_second_moment(self):
        decomp = build_decomposition("excited", 1, PhysicalConstants())
        rng = np.random.default_rng(6)
        xp, _ = decomp.sample_plus(100000, rng)
        xm, _ = decomp.sample_minus(100000, rng)
        second = (1.0 + decomp.alpha0) * np.mean(xp ** 2) - decomp.alpha0 * np.mean(xm ** 2)
        self.assertAlmostEqual(float(second), 1.5, delta=0.05)

    def test_unknown_state(self):
        with self.assertRaises(UnknownNameError):
            build_decomposition("squeezed", 1, PhysicalConstants())
        with self.assertRaises(UnknownNameError):
            build_decomposition("coherent", 1, PhysicalConstants(), {"width": 1.0})


class TestAnalyticFlowGenerator(unittest.TestCase):
    """Test suite for the exact-flow stand-in."""

    def test_harmonic_quarter_period(self):
        gen = AnalyticFlowGenerator("harmonic", 1, {"mass": 1.0, "omega": 1.0})
        pushed = gen.push_batch("plus", np.array([np.pi / 2]), np.array([[1.0]]), np.array([[0.0]]),
                                np.zeros((1, 0)))
        self.assertAlmostEqual(float(pushed.x[0, 0]), 0.0, places=12)
        self.assertAlmostEqual(float(pushed.p[0, 0]), -1.0, places=12)
        self.assertFalse(gen.trainable)
        self.assertEqual(gen.parameter_groups(), {})

    def test_free_streaming(self):
        gen = AnalyticFlowGenerator("free", 1, {"mass": 2.0})
        pushed = gen.push_batch("plus", np.array([3.0]), np.array([[0.5]]), np.array([[1.0]]), np.zeros((1, 0)))
        self.assertAlmostEqual(float(pushed.x[0, 0]), 2.0, places=12)

    def test_unknown_flow(self):
        with self.assertRaises(UnknownNameError):
            AnalyticFlowGenerator("morse", 1)


if __name__ == "__main__":
    unittest.main()
