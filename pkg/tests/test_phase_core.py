"""
Unit tests for the phase_core module.

These tests validate configuration checks, the phase-space containers and
the counter-based random streams.
"""

import unittest
import os
import sys

import numpy as np

# Import from parent directory
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from phase_core import (ConfigValidationError, DimensionMismatchError, EmptyBatchError, PhaseBatch,
                        PhasePoint, PhysicalConstants, RandomStreams, RunConfig, validate_config)


class TestValidateConfig(unittest.TestCase):
    """Test suite for validate_config."""

    def test_defaults_are_valid(self):
        validate_config(RunConfig(), PhysicalConstants())

    def test_zero_hbar_is_rejected(self):
        with self.assertRaises(ConfigValidationError) as ctx:
            validate_config(RunConfig(), PhysicalConstants(hbar=0.0))
        self.assertEqual(ctx.exception.kind, "non-positive-constant")
        self.assertEqual(ctx.exception.field, "hbar")

    def test_negative_n_adv_is_rejected(self):
        with self.assertRaises(ConfigValidationError) as ctx:
            validate_config(RunConfig(n_adv=-1), PhysicalConstants())
        self.assertEqual(ctx.exception.field, "n_adv")

    def test_zero_n_adv_is_allowed(self):
        validate_config(RunConfig(n_adv=0), PhysicalConstants())

    def test_dimension_mismatch(self):
        with self.assertRaises(ConfigValidationError) as ctx:
            validate_config(RunConfig(), PhysicalConstants(dim=2), expected_dim=1)
        self.assertEqual(ctx.exception.kind, "dimension-mismatch")

    def test_non_finite_horizon(self):
        with self.assertRaises(ConfigValidationError):
            validate_config(RunConfig(horizon=float("inf")), PhysicalConstants())


class TestPhaseContainers(unittest.TestCase):
    """Test suite for PhasePoint and PhaseBatch."""

    def test_point_lengths_must_agree(self):
        with self.assertRaises(DimensionMismatchError):
            PhasePoint([0.0, 1.0], [0.0])

    def test_point_is_read_only(self):
        pt = PhasePoint([1.0], [2.0])
        with self.assertRaises(ValueError):
            pt.x[0] = 5.0

    def test_batch_iterates_points(self):
        batch = PhaseBatch([0.1, 0.2], [[1.0], [2.0]], [[3.0], [4.0]], horizon=1.0)
        items = list(batch)
        self.assertEqual(len(items), 2)
        self.assertAlmostEqual(items[1][0], 0.2)
        self.assertEqual(items[1][1].p[0], 4.0)

    def test_empty_batch(self):
        with self.assertRaises(EmptyBatchError):
            PhaseBatch([], np.zeros((0, 1)), np.zeros((0, 1)), horizon=1.0)

    def test_times_outside_horizon(self):
        with self.assertRaises(ValueError):
            PhaseBatch([1.5], [[0.0]], [[0.0]], horizon=1.0)


class TestRandomStreams(unittest.TestCase):
    """Test suite for the counter-based random streams."""

    def test_same_key_same_draws(self):
        a = RandomStreams(5).substream("draw", 3).generator("init_plus").standard_normal(4)
        b = RandomStreams(5).substream("draw", 3).generator("init_plus").standard_normal(4)
        np.testing.assert_array_equal(a, b)

    def test_draw_order_does_not_matter(self):
        streams = RandomStreams(9)
        first = streams.generator("noise_plus").standard_normal(3)
        streams.generator("init_plus").standard_normal(100)
        again = streams.generator("noise_plus").standard_normal(3)
        np.testing.assert_array_equal(first, again)

    def test_distinct_names_and_keys_differ(self):
        streams = RandomStreams(1)
        a = streams.generator("init_plus").standard_normal(4)
        b = streams.generator("init_minus").standard_normal(4)
        c = streams.substream("draw", 1).generator("init_plus").standard_normal(4)
        self.assertFalse(np.array_equal(a, b))
        self.assertFalse(np.array_equal(a, c))

    def test_unknown_stream_name(self):
        with self.assertRaises(KeyError):
            RandomStreams(0).generator("bogus")


if __name__ == "__main__":
    unittest.main()
