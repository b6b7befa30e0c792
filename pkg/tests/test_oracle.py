"""
Unit tests for the oracle module.

These tests validate the grid reference: the spectral potential operator and
its truncated expansion, closed-form states and flows, the split-step
propagator and the Wigner transform.
"""

import unittest
import os
import sys
import math

import numpy as np

# Import from parent directory
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from oracle import (AliasingError, GridEdgeDecayError, GridField, analytic_solutions, equivalence_sweep,
                    evolution_weak_residual, excited_negative_volume, gaussian_packet, ground_state_wigner,
                    harmonic_eigenstate, momentum_density, negative_volume, spectral_p_derivative,
                    split_step_evolve, sweep_state, theta_apply, truncated_operator_apply, uniform_grid,
                    wigner_transform)
from potentials import UnknownNameError, build_potential
from testfuncs import TestFunction, init_test_set
from phase_core import RandomStreams


NODES = uniform_grid(256, -8.0, 8.0)


def _ground(x0=0.0, p0=0.0):
    return GridField.from_function(lambda x, p: ground_state_wigner(x, p, x0=x0, p0=p0), NODES, NODES)


class TestPotentialOperator(unittest.TestCase):
    """Test suite for theta_apply and its truncations."""

    def test_free_potential_gives_zero(self):
        theta = theta_apply(build_potential("free", 1), _ground(), 1.0)
        self.assertEqual(float(np.max(np.abs(theta.values))), 0.0)

    def test_quadratic_matches_classical_force(self):
        f = _ground(1.0, -0.5)
        theta = theta_apply(build_potential("harmonic", 1), f, 1.0)
        force = NODES[:, None] * spectral_p_derivative(f, 1).values
        self.assertLessEqual(np.linalg.norm(theta.values + force) / np.linalg.norm(force), 1e-8)

    def test_first_order_truncation_for_quadratic(self):
        V = build_potential("harmonic", 1)
        f = _ground(0.5, 0.5)
        exact = theta_apply(V, f, 1.0).values
        series = truncated_operator_apply(V, f, 1.0, order=1).values
        self.assertLessEqual(np.linalg.norm(series - exact) / np.linalg.norm(exact), 1e-6)

    def test_invalid_truncation_order(self):
        with self.assertRaises(ValueError):
            truncated_operator_apply(build_potential("harmonic", 1), _ground(), 1.0, order=2)

    def test_edge_decay_required(self):
        wide = GridField(NODES, NODES, np.ones((NODES.size, NODES.size)))
        with self.assertRaises(GridEdgeDecayError):
            theta_apply(build_potential("harmonic", 1), wide, 1.0)

    def test_equivalence_sweep(self):
        tfs = init_test_set(3, 1, 2.0, 2.0, 0.0, RandomStreams(7).generator("test_init"))
        table = equivalence_sweep(tfs, hbars=(1.0,), potentials=("harmonic", "cosine"))
        self.assertEqual(len(table), 2 * 2 * 3)
        ok = (table["rel_err"] <= 1e-6) | (table["abs_err"] <= 1e-12)
        self.assertTrue(bool(ok.all()))

    def test_unknown_sweep_state(self):
        with self.assertRaises(UnknownNameError):
            sweep_state("cat", NODES, NODES)


class TestClosedForms(unittest.TestCase):
    """Test suite for closed-form states and flows."""

    def test_excited_negative_volume(self):
        self.assertAlmostEqual(excited_negative_volume(1024), 2.0 * math.exp(-0.5) - 1.0, delta=1e-3)

    def test_ground_state_is_nonnegative(self):
        self.assertEqual(negative_volume(_ground()), 0.0)
        self.assertAlmostEqual(_ground().integrate(), 1.0, places=10)

    def test_harmonic_rotation_of_coherent_state(self):
        t = 0.8
        solution = analytic_solutions("harmonic", {"mass": 1.0, "omega": 1.0}, t)
        f_t = solution.density(lambda x, p: ground_state_wigner(x, p, x0=1.0))
        xx, pp = np.meshgrid(np.linspace(-2, 2, 9), np.linspace(-2, 2, 9), indexing="ij")
        np.testing.assert_allclose(f_t(xx, pp), ground_state_wigner(xx, pp, x0=math.cos(t), p0=-math.sin(t)),
                                   atol=1e-14)

    def test_unknown_flow(self):
        with self.assertRaises(UnknownNameError):
            analytic_solutions("double_well", None, 1.0)


class TestReferenceDynamics(unittest.TestCase):
    """Test suite for the split-step propagator and the Wigner transform."""

    def test_zero_steps_is_identity(self):
        psi0 = gaussian_packet(NODES, 1.0, 0.0, 0.7, 1.0)
        psi = split_step_evolve(psi0, build_potential("anharmonic", 1), 1.0, 1.0, 0.01, 0)
        np.testing.assert_array_equal(psi.values, psi0.values)

    def test_aliasing_step_rejected(self):
        psi0 = gaussian_packet(NODES, 0.0, 0.0, 0.7, 1.0)
        with self.assertRaises(AliasingError):
            split_step_evolve(psi0, build_potential("free", 1), 1.0, 1.0, 10.0, 1)

    def test_free_packet_spreading(self):
        x = uniform_grid(512, -20.0, 20.0)
        psi = split_step_evolve(gaussian_packet(x, 0.0, 0.0, 1.0, 1.0), build_potential("free", 1),
                                1.0, 1.0, 1.0 / 400, 400)
        density = psi.density() * psi.dx
        mean = float(density @ x)
        self.assertAlmostEqual(float(density @ (x - mean) ** 2), 1.25, delta=1e-8)

    def test_wigner_marginals(self):
        psi = harmonic_eigenstate(NODES, 0)
        f = wigner_transform(psi, 1.0, NODES)
        np.testing.assert_allclose(f.values @ np.full(NODES.size, f.dp), psi.density(), atol=1e-8)
        np.testing.assert_allclose(np.full(NODES.size, f.dx) @ f.values, momentum_density(psi, 1.0, NODES),
                                   atol=1e-8)
        self.assertGreaterEqual(float(np.min(f.values)), -1e-10)

    def test_excited_state_transform_is_negative_at_origin(self):
        f = wigner_transform(harmonic_eigenstate(NODES, 1), 1.0, NODES)
        self.assertAlmostEqual(float(f.values[128, 128]), -1.0 / math.pi, places=8)

    def test_weak_form_of_grid_evolution(self):
        tf = TestFunction(np.array([0.5]), np.array([0.7]), 0.3, 0.1)
        psi0 = gaussian_packet(NODES, 1.0, 0.0, 1.0 / math.sqrt(2.0), 1.0)
        residual = evolution_weak_residual(psi0, build_potential("harmonic", 1), 1.0, 1.0, 0.5, tf, NODES)
        self.assertLessEqual(abs(residual), 1e-4)


if __name__ == "__main__":
    unittest.main()
