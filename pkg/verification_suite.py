#!/usr/bin/env python3
"""
Verification Suite for the Wigner Pushforward Solver

This script checks that the solver's numerics are sound by running a fixed
list of named checks:
1. The reduced finite-difference form of the potential integral against the
   direct Fourier evaluation on a grid
2. Classical-limit and Moyal-series convergence of the potential difference
3. Reverse-mode gradients against central finite differences
4. Zero residual of the exact free and harmonic flows
5. Architecture guarantees of the signed pushforward
6. Marginals, negativity and periodicity of the grid reference dynamics

Each check returns a CheckResult; the report is written as JSON.
"""

import logging
import math
import os
import sys
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

from experiment_config import ExperimentConfig, load_preset, validate_experiment
from oracle import (GridField, equivalence_sweep, excited_negative_volume, gaussian_packet,
                    harmonic_eigenstate, split_step_evolve, spectral_p_derivative, theta_apply,
                    uniform_grid, wigner_transform, evolution_weak_residual, ground_state_wigner,
                    momentum_density)
from phase_core import PhysicalConstants, RandomStreams, RunConfig
from potentials import build_potential, moyal_truncated_term, potential_difference
from pushforward import (AnalyticFlowGenerator, CoherentStateDecomposition, SignedPushforward,
                         sample_batch, signed_expectation)
from residual import ResidualAssembler, ResidualSettings
from run_store import RunStore
from testfuncs import TestFunction, TestFunctionSet, init_test_set


logger = logging.getLogger("VerificationSuite")

REPORT_NAME = "verification.json"


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    detail: str = ""


def _slope(hbars, errors) -> float:
    return float(np.polyfit(np.log(hbars), np.log(errors), 1)[0])


def _perturbed_pushforward(rng: np.random.Generator, dim: int = 1, hidden=(4, 4),
                           alpha_raw: float = -0.5, scale: float = 0.3) -> SignedPushforward:
    """Small network pair with every weight nonzero (the output layer starts at zero otherwise)."""
    sp = SignedPushforward.create(dim, rng, hidden=hidden, d_base=2 * dim, alpha0=1.0)
    groups = sp.parameter_groups()
    update = {branch: {name: value + scale * rng.standard_normal(value.shape)
                       for name, value in groups[branch].items()} for branch in ("plus", "minus")}
    update["alpha"] = {"alpha_raw": np.array([alpha_raw])}
    return sp.with_groups(update)


class VerificationSuite:
    """
    Runs the named numerical checks for one experiment configuration.

    Grid sizes and sweep extents come from the config's oracle section, the
    seed from its run section; everything else is fixed by the check.
    """

    def __init__(self, cfg: ExperimentConfig, store: Optional[RunStore] = None, threads: int = 1):
        self.cfg = cfg
        self.store = store
        self.threads = threads
        self.streams = RandomStreams(cfg.run.seed).substream("verify")
        self.logger = logging.getLogger("VerificationSuite")

    @property
    def checks(self) -> List[Tuple[str, Callable[[], Tuple[bool, float, str]]]]:
        return [
            ("central_equivalence", self.check_central_equivalence),
            ("theta_matches_classical_for_quadratic", self.check_theta_quadratic),
            ("classical_limit_slope", self.check_classical_limit),
            ("moyal_polynomial_termination", self.check_moyal_termination),
            ("moyal_cosine_truncation_slope", self.check_moyal_cosine_slope),
            ("gradient_check", self.check_gradients),
            ("frozen_free_residual", lambda: self.check_frozen_residual("free")),
            ("frozen_harmonic_residual", lambda: self.check_frozen_residual("harmonic")),
            ("standard_error_scaling", self.check_standard_error_scaling),
            ("push_identity_at_zero", self.check_push_identity),
            ("signed_mass_one", self.check_signed_mass),
            ("v_call_count", self.check_v_calls),
            ("negative_volume_refinement", self.check_negative_volume),
            ("wigner_marginals", self.check_wigner_marginals),
            ("free_packet_spreading", self.check_free_packet),
            ("harmonic_period_return", self.check_harmonic_period),
            ("evolution_weak_form", self.check_evolution_weak_form),
        ]

    def _grid(self) -> np.ndarray:
        return uniform_grid(self.cfg.oracle.n_grid, -self.cfg.oracle.half_width, self.cfg.oracle.half_width)

    # --- potential integral ---

    def check_central_equivalence(self):
        o = self.cfg.oracle
        tfs = init_test_set(o.sweep_tests, 1, o.sweep_scale, o.sweep_scale, 0.0,
                            self.streams.generator("test_init"))
        table = equivalence_sweep(tfs, o.sweep_hbars, n_grid=o.n_grid, half_width=o.half_width)
        ok = (table["rel_err"] <= 1e-6) | (table["abs_err"] <= 1e-12)
        worst = float(table["rel_err"].where(~(table["abs_err"] <= 1e-12), 0.0).max())
        return bool(ok.all()), worst, f"{len(table)} rows, {int((~ok).sum())} above tolerance"

    def check_theta_quadratic(self):
        nodes = self._grid()
        V = build_potential("harmonic", 1)
        f = GridField.from_function(lambda x, p: ground_state_wigner(x, p, x0=1.0, p0=-0.5), nodes, nodes)
        theta = theta_apply(V, f, 1.0)
        force = nodes[:, None] * spectral_p_derivative(f, 1).values
        rel = float(np.linalg.norm(theta.values + force) / np.linalg.norm(force))
        return rel <= 1e-8, rel, "relative L2 distance to -V' df/dp"

    def check_classical_limit(self):
        v0, k0, x, w = 1.0, 1.0, np.array([[0.7]]), np.array([[1.3]])
        V = build_potential("cosine", 1, {"v0": v0, "k0": k0})
        exact = -v0 * k0 * np.sin(k0 * 0.7) * 1.3
        hbars = np.array([1e-1, 1e-2, 1e-3])
        errors = np.array([abs(float(potential_difference(V, x, w, h)[0]) - exact) for h in hbars])
        slope = _slope(hbars, errors)
        return 1.9 <= slope <= 2.1, slope, f"errors {errors.tolist()}"

    def check_moyal_termination(self):
        rng = self.streams.generator("times")
        worst = 0.0
        for degree, order in ((4, 3), (5, 5)):
            coeffs = np.zeros(6)
            coeffs[:degree + 1] = rng.uniform(-1.0, 1.0, degree + 1)
            V = build_potential("polynomial", 1, {f"c{i}": c for i, c in enumerate(coeffs)})
            x = rng.uniform(-1.5, 1.5, (16, 1))
            w = rng.uniform(-2.0, 2.0, (16, 1))
            for hbar in (0.5, 1.0, 2.0):
                exact = potential_difference(V, x, w, hbar)
                series = moyal_truncated_term(V, x, w, hbar, order=order, fd_step=0.1)
                worst = max(worst, float(np.max(np.abs(series - exact)) / max(np.max(np.abs(exact)), 1e-12)))
        return worst <= 1e-8, worst, "max relative deviation, degree 4 at order 3 and degree 5 at order 5"

    def check_moyal_cosine_slope(self):
        V = build_potential("cosine", 1)
        x, w = np.array([[0.4]]), np.array([[1.1]])
        hbars = np.array([0.5, 0.25, 0.125])
        errors = np.array([abs(float(moyal_truncated_term(V, x, w, h, order=3)[0])
                               - float(potential_difference(V, x, w, h)[0])) for h in hbars])
        slope = _slope(hbars, errors)
        return 3.7 <= slope <= 4.3, slope, f"errors {errors.tolist()}"

    # --- Monte Carlo residual ---

    def check_gradients(self):
        """Reverse-mode gradients of a tiny instance against central differences of the loss."""
        consts = PhysicalConstants(hbar=1.0, mass=1.0, dim=1)
        cfg = RunConfig(horizon=1.0, batch_size=32, num_test=2, seed=self.cfg.run.seed)
        V = build_potential("anharmonic", 1)
        assembler = ResidualAssembler(V, consts, cfg, ResidualSettings(potential_gradient="finite_difference"))
        decomp = CoherentStateDecomposition(1, consts, x0=1.0, p0=0.0)
        sp = _perturbed_pushforward(self.streams.generator("network"))
        tfs = init_test_set(2, 1, 1.5, 1.5, 1.5, self.streams.generator("test_init"))
        draws = self.streams.substream("gradient_draws")
        _, grads = assembler.loss_and_gradients(sp, decomp, tfs, draws)

        def loss(candidate_sp, candidate_tfs) -> float:
            return assembler.estimate(candidate_sp, decomp, candidate_tfs, draws).loss

        h = 1e-6
        analytic, numeric = [], []
        groups = sp.parameter_groups()
        probes = [("plus", "W0", (0, 0)), ("plus", "W1", (1, 2)), ("plus", "b2", (1,)),
                  ("minus", "W2", (0, 3)), ("minus", "b0", (2,)), ("alpha", "alpha_raw", (0,))]
        for group, name, index in probes:
            central = []
            for sign in (1.0, -1.0):
                arrays = {key: value.copy() for key, value in groups[group].items()}
                arrays[name][index] += sign * h
                central.append(loss(sp.with_groups({group: arrays}), tfs))
            numeric.append((central[0] - central[1]) / (2.0 * h))
            analytic.append(float(grads[group][name][index]))
        for name, index in (("w_x", (0, 0)), ("w_p", (1, 0)), ("kappa", (0,)), ("b", (1,))):
            central = []
            for sign in (1.0, -1.0):
                arrays = {key: value.copy() for key, value in tfs.as_arrays().items()}
                arrays[name][index] += sign * h
                central.append(loss(sp, TestFunctionSet.from_arrays(arrays)))
            numeric.append((central[0] - central[1]) / (2.0 * h))
            analytic.append(float(grads["adversary"][name][index]))
        analytic, numeric = np.array(analytic), np.array(numeric)
        rel = float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-8))
        return rel <= 1e-4, rel, f"{analytic.size} probed entries"

    def _frozen_estimate(self, name: str, batch_size: int, stream: str):
        consts = PhysicalConstants(hbar=1.0, mass=1.0, dim=1)
        cfg = RunConfig(horizon=1.0, batch_size=batch_size, num_test=4, seed=self.cfg.run.seed)
        V = build_potential(name, 1)
        assembler = ResidualAssembler(V, consts, cfg, threads=self.threads)
        decomp = CoherentStateDecomposition(1, consts, x0=1.0, p0=0.5)
        sp = AnalyticFlowGenerator(name, 1, {"mass": 1.0, "omega": 1.0})
        tfs = init_test_set(4, 1, 1.0, 1.0, 1.0, self.streams.substream("frozen").generator("test_init"))
        return assembler.estimate(sp, decomp, tfs, self.streams.substream(stream, name))

    def check_frozen_residual(self, name: str):
        estimate = self._frozen_estimate(name, 10000, "frozen")
        ratio = float(np.max(np.abs(estimate.per_test) / estimate.standard_errors))
        return ratio <= 3.0, ratio, "max |R| in standard errors"

    def check_standard_error_scaling(self):
        small = float(np.mean(self._frozen_estimate("harmonic", 1000, "scaling").standard_errors))
        large = float(np.mean(self._frozen_estimate("harmonic", 10000, "scaling").standard_errors))
        slope = math.log(large / small) / math.log(10.0)
        return -0.6 <= slope <= -0.4, slope, "log-log slope of the standard error in M"

    # --- architecture ---

    def check_push_identity(self):
        rng = self.streams.generator("noise_plus")
        sp = _perturbed_pushforward(self.streams.generator("network"), dim=2, hidden=(16, 16))
        x0 = rng.standard_normal((10000, 2))
        p0 = rng.standard_normal((10000, 2))
        z = rng.standard_normal((10000, sp.d_base))
        exact = True
        for branch in ("plus", "minus"):
            pushed = sp.push_batch(branch, np.zeros(10000), x0, p0, z)
            exact &= bool(np.array_equal(pushed.x, x0) and np.array_equal(pushed.p, p0))
        return exact, 0.0 if exact else 1.0, "10000 probes per branch"

    def check_signed_mass(self):
        consts = PhysicalConstants()
        decomp = CoherentStateDecomposition(1, consts)
        worst = 0.0
        for raw in (-20.0, -3.0, 0.0, 2.0, 15.0):
            sp = _perturbed_pushforward(self.streams.generator("network"), alpha_raw=raw)
            sample = sample_batch(sp, decomp, np.full(100, 0.5), self.streams.substream("mass"))
            total = signed_expectation(sample.plus.batch(1.0), sample.minus.batch(1.0), sample.alpha_plus,
                                       sample.alpha_minus, lambda t, x, p: np.ones(len(t)))
            worst = max(worst, abs(float(total) - 1.0))
        return worst <= 1e-12, worst, "max |E[1] - 1| over alpha_raw"

    def check_v_calls(self):
        consts = PhysicalConstants()
        cfg = RunConfig(batch_size=64, num_test=3, seed=self.cfg.run.seed)
        V = build_potential("anharmonic", 1)
        sp = SignedPushforward.create(1, self.streams.generator("network"), hidden=(8,), alpha0=0.0,
                                      freeze_alpha=True)
        tfs = init_test_set(3, 1, 1.0, 1.0, 1.0, self.streams.generator("test_init"))
        estimate = ResidualAssembler(V, consts, cfg).estimate(sp, CoherentStateDecomposition(1, consts),
                                                             tfs, self.streams.substream("calls"))
        expected = 2 * cfg.batch_size * cfg.num_test
        return estimate.v_calls == expected, float(estimate.v_calls), f"expected {expected}"

    # --- grid reference ---

    def check_negative_volume(self):
        coarse = excited_negative_volume(512)
        fine = excited_negative_volume(1024)
        closed = 2.0 * math.exp(-0.5) - 1.0
        ok = abs(coarse - fine) <= 1e-3 and abs(fine - closed) <= 1e-3
        return ok, fine, f"512 grid: {coarse:.6f}, closed form {closed:.6f}"

    def check_wigner_marginals(self):
        nodes = self._grid()
        psi = harmonic_eigenstate(nodes, 0)
        f = wigner_transform(psi, 1.0, nodes)
        norm_err = abs(f.integrate() - 1.0)
        x_marginal = f.values @ np.full(nodes.size, f.dp)
        p_marginal = np.full(nodes.size, f.dx) @ f.values
        x_err = float(np.max(np.abs(x_marginal - psi.density())))
        p_err = float(np.max(np.abs(p_marginal - momentum_density(psi, 1.0, nodes))))
        worst = max(norm_err, x_err, p_err)
        ok = worst <= 1e-8 and float(np.min(f.values)) >= -1e-10
        return ok, worst, f"norm {norm_err:.2e}, x {x_err:.2e}, p {p_err:.2e}, min f {np.min(f.values):.2e}"

    def check_free_packet(self):
        x = uniform_grid(512, -20.0, 20.0)
        sigma0, t = 1.0, 1.0
        psi = split_step_evolve(gaussian_packet(x, 0.0, 0.0, sigma0, 1.0), build_potential("free", 1),
                                1.0, 1.0, t / 400, 400)
        density = psi.density() * psi.dx
        mean = float(density @ x)
        variance = float(density @ (x - mean) ** 2)
        expected = sigma0 ** 2 + (t / (2.0 * sigma0)) ** 2
        err = abs(variance - expected)
        return err <= 1e-8, err, f"variance {variance:.10f}, closed form {expected:.10f}"

    def check_harmonic_period(self):
        nodes = self._grid()
        o = self.cfg.oracle
        V = build_potential(o.evolve_potential, 1)
        psi0 = gaussian_packet(nodes, 1.0, 0.0, 1.0 / math.sqrt(2.0), 1.0)
        span = 2.0 * math.pi * o.evolve_periods
        psi = split_step_evolve(psi0, V, 1.0, 1.0, span / o.evolve_steps, o.evolve_steps)
        start = wigner_transform(psi0, 1.0, nodes)
        end = wigner_transform(psi, 1.0, nodes)
        dist = math.sqrt(start.integrate((end.values - start.values) ** 2))
        return dist <= 1e-6, dist, f"L2 distance after {o.evolve_periods} period(s)"

    def check_evolution_weak_form(self):
        nodes = self._grid()
        tf = TestFunction(np.array([0.5]), np.array([0.7]), 0.3, 0.1)
        worst = 0.0
        for name in ("harmonic", "anharmonic"):
            psi0 = gaussian_packet(nodes, 1.0, 0.0, 1.0 / math.sqrt(2.0), 1.0)
            residual = evolution_weak_residual(psi0, build_potential(name, 1), 1.0, 1.0, 0.5, tf, nodes)
            worst = max(worst, abs(residual))
        return worst <= 1e-4, worst, "max |residual| over harmonic and anharmonic"

    # --- driver ---

    def run(self) -> Dict[str, Any]:
        """
        Run every check; exceptions inside a check count as failures.

        Returns:
            Report dictionary with 'passed', 'first_failure' and 'checks'
        """
        results: List[CheckResult] = []
        for name, check in self.checks:
            try:
                passed, value, detail = check()
                result = CheckResult(name, bool(passed), float(value), detail)
            except Exception as e:
                self.logger.error(f"Check {name} raised {type(e).__name__}: {e}")
                result = CheckResult(name, False, float("nan"), f"{type(e).__name__}: {e}")
            level = logging.INFO if result.passed else logging.ERROR
            self.logger.log(level, f"{'PASS' if result.passed else 'FAIL'} {name}: "
                                   f"value={result.value:.6g} {result.detail}")
            results.append(result)

        failures = [r.name for r in results if not r.passed]
        report = {"passed": not failures,
                  "first_failure": failures[0] if failures else None,
                  "checks": [asdict(r) for r in results]}
        if self.store is not None:
            self.store.write_json(report, REPORT_NAME)
        return report


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    logging.basicConfig(
        level=os.environ.get("LOGGING_LEVEL", "INFO").upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stdout
    )
    cfg = load_preset("verify-default")
    validate_experiment(cfg)
    report = VerificationSuite(cfg, RunStore(cfg.output.out_dir)).run()
    return 0 if report["passed"] else 4


if __name__ == "__main__":
    sys.exit(main())
