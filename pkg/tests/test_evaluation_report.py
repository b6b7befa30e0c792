"""
Unit tests for the evaluation_report module.
"""

import unittest
import os
import sys
import shutil
import tempfile

import numpy as np

# Import from parent directory
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from evaluation_report import SignedSampleReporter, sample_frame, signed_histogram, signed_moments
from oracle import analytic_flow
from phase_core import ConfigValidationError, PhysicalConstants
from pushforward import (AnalyticFlowGenerator, CoherentStateDecomposition, PushedBranch, SignedSample,
                         build_decomposition)
from run_store import RunStore


CONSTS = PhysicalConstants()


def _branch(x, p):
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    p = np.asarray(p, dtype=float).reshape(-1, 1)
    return PushedBranch(np.zeros(len(x)), x, p, np.zeros((len(x), 0)), x, p)


class TestSignedStatistics(unittest.TestCase):
    """Test suite for the signed histogram and moments."""

    def test_histogram_weights(self):
        sample = SignedSample(_branch([0.25, 0.75], [0.0, 0.0]), _branch([0.25, 0.25], [0.0, 0.0]), 1.5, 0.5)
        hist = signed_histogram(sample, "x", bins=2, edges=np.array([0.0, 0.5, 1.0]))
        np.testing.assert_allclose(hist["density"], [(1.5 - 1.0) / 2 / 0.5, 1.5 / 2 / 0.5])
        self.assertEqual(list(hist["variable"]), ["x0", "x0"])
        self.assertAlmostEqual(float(np.sum(hist["density"] * 0.5)), 1.0)

    def test_negative_bin_is_flagged(self):
        plus = _branch(np.full(200, 2.0), np.zeros(200))
        minus = _branch(np.where(np.arange(200) % 2 == 0, -2.0, 2.0), np.zeros(200))
        hist = signed_histogram(SignedSample(plus, minus, 1.5, 0.5), "x", bins=4,
                                edges=np.linspace(-3.0, 3.0, 5))
        self.assertTrue(bool(hist["flagged"].iloc[0]))
        self.assertFalse(bool(hist["flagged"].iloc[3]))

    def test_bad_variable(self):
        sample = SignedSample(_branch([0.0], [0.0]), None, 1.0, 0.0)
        with self.assertRaises(ValueError):
            signed_histogram(sample, "q")

    def test_signed_moments(self):
        sample = SignedSample(_branch([1.0, 3.0], [0.0, 2.0]), _branch([0.0, 0.0], [0.0, 0.0]), 1.5, 0.5)
        moments = signed_moments(sample)
        np.testing.assert_allclose(moments["mean"], [3.0, 1.5])
        self.assertEqual(moments["covariance"].shape, (2, 2))

    def test_sample_frame_columns(self):
        sample = SignedSample(_branch([1.0], [2.0]), _branch([3.0], [4.0]), 1.25, 0.25)
        frame = sample_frame(sample, 0.5)
        self.assertEqual(list(frame.columns), ["t", "branch", "weight", "x0", "p0"])
        self.assertEqual(list(frame["weight"]), [1.25, -0.25])


class TestSignedSampleReporter(unittest.TestCase):
    """Test suite for the SignedSampleReporter class."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.store = RunStore(self.test_dir)

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def _reporter(self, decomp=None, store=None):
        decomp = decomp or CoherentStateDecomposition(1, CONSTS, x0=1.0, p0=0.0)
        sp = AnalyticFlowGenerator("harmonic", 1, {"mass": 1.0, "omega": 1.0}, alpha=decomp.alpha0)
        return SignedSampleReporter(sp, decomp, CONSTS, horizon=np.pi / 2, seed=3, store=store,
                                    reference_flow=analytic_flow("harmonic"))

    def test_time_zero_returns_initial_draws(self):
        reporter = self._reporter()
        sample = reporter.draw(0.0, 50)
        x0, p0 = reporter.decomp.sample_plus(50, reporter.streams.substream("evaluate", 0).generator("init_plus"))
        np.testing.assert_array_equal(sample.plus.x, x0)
        np.testing.assert_array_equal(sample.plus.p, p0)

    def test_nonnegative_run_has_no_flagged_bins(self):
        summary = self._reporter(store=self.store).evaluate([0.0, np.pi / 2], 4000)
        self.assertEqual(summary["total_negative_bins"], 0)
        final = summary["times"][1]
        self.assertLess(final["oracle"]["max_abs_error_x"], 0.1)
        self.assertLess(final["oracle"]["max_abs_error_p"], 0.1)
        for name in ("samples.csv", "marginals.csv", "evaluation.json"):
            self.assertTrue(os.path.exists(self.store.path(name)))
        self.assertEqual(len(self.store.read_table("samples.csv")), 2 * 4000)

    def test_excited_state_carries_negative_weights(self):
        decomp = build_decomposition("excited", 1, CONSTS)
        summary = self._reporter(decomp=decomp).evaluate([0.0], 2000)
        self.assertAlmostEqual(summary["times"][0]["alpha"], decomp.alpha0)
        np.testing.assert_allclose(summary["times"][0]["mean"], [0.0, 0.0], atol=0.2)

    def test_time_outside_horizon(self):
        with self.assertRaises(ConfigValidationError):
            self._reporter().evaluate([2.0], 100)

    def test_too_few_samples(self):
        with self.assertRaises(ConfigValidationError):
            self._reporter().evaluate([0.0], 1)


if __name__ == "__main__":
    unittest.main()
