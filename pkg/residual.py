"""
Residual Module for the Wigner Pushforward Solver

Monte Carlo assembly of the weak-form residual for every test function:

    R_k = E_T[sin phi_k] - E_0[sin phi_k] - T * E_{t ~ U[0,T]}[a_k cos phi_k],
    a_k = kappa_k + w_x,k . p / m - D_k(x) / hbar,

the squared-residual loss, and its exact pathwise gradients for the generator
(both branches and the mixing weight) and the adversary.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict

from autodiff_net import GradientBuffer
from phase_core import PhysicalConstants, RandomStreams, RunConfig, WignerError
from potentials import CountingPotential, PotentialOracle
from pushforward import InitialDecomposition, PushedBranch, sample_batch, signed_contributions, softplus_slope
from testfuncs import ForceTerm, TestFunctionSet, residual_integrands, select_force_term


class NonFiniteResidualError(WignerError):
    """Raised when a residual estimate contains NaN or Inf."""
    pass


class ResidualSettings(BaseModel):
    """Estimator options; the defaults reproduce the plain squared-residual loss."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    time_sampling: Literal["uniform", "stratified"] = "uniform"
    variance_corrected: bool = False
    extra_horizons: Tuple[float, ...] = ()
    force_term: Literal["quantum", "classical"] = "quantum"
    potential_gradient: Literal["detach", "finite_difference"] = "detach"
    fd_step: float = 1e-5
    separable_fast_path: bool = False
    block_size: int = 256


@dataclass
class ResidualEstimate:
    """
    Per-test residuals (K entries per horizon, terminal horizon first), the
    loss and per-test variance estimates of each residual.
    """

    per_test: np.ndarray
    loss: float
    variances: np.ndarray
    v_calls: int = 0
    diagnostics: Dict[str, object] = field(default_factory=dict)

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(self.variances)

    @property
    def noise_floor(self) -> float:
        """Expected loss of an exact solution: the mean residual variance."""
        return float(np.mean(self.variances))

    def as_record(self) -> Dict[str, object]:
        return {
            "loss": self.loss,
            "per_test": self.per_test.tolist(),
            "variance": self.variances.tolist(),
            "v_calls": self.v_calls,
        }


@dataclass
class _TermSamples:
    """One residual term's draws: scale multiplies the signed mean."""

    name: str
    horizon_index: int
    scale: float
    plus: PushedBranch
    minus: Optional[PushedBranch]
    weight_plus: float
    weight_minus: float
    differentiable: bool
    values_plus: np.ndarray = None
    values_minus: Optional[np.ndarray] = None
    extras: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def contributions(self) -> np.ndarray:
        return signed_contributions(self.values_plus, self.values_minus, self.weight_plus, self.weight_minus)


def _raw_branch(decomp: InitialDecomposition, branch: str, m: int, streams: RandomStreams) -> PushedBranch:
    x0, p0 = getattr(decomp, f"sample_{branch}")(m, streams.generator(f"init_{branch}"))
    times = np.zeros(m)
    return PushedBranch(times, x0, p0, np.zeros((m, 0)), x0, p0, None)


class ResidualAssembler:
    """
    Evaluates residual estimates and gradients for one potential, one set of
    constants and one run configuration.

    Per-sample integrands are computed in fixed row blocks; with threads > 1
    the blocks run on a thread pool and are reassembled in block order, so the
    result does not depend on the worker count.
    """

    def __init__(self, V: PotentialOracle, consts: PhysicalConstants, cfg: RunConfig,
                 settings: Optional[ResidualSettings] = None, threads: int = 1):
        self.V = V
        self.consts = consts
        self.cfg = cfg
        self.settings = settings or ResidualSettings()
        self.threads = max(1, int(threads))
        self.force_term: ForceTerm = select_force_term(self.settings.force_term,
                                                       self.settings.separable_fast_path)
        self.logger = logging.getLogger('ResidualAssembler')

    @property
    def horizons(self) -> List[float]:
        extra = sorted(h for h in set(self.settings.extra_horizons) if h != self.cfg.horizon)
        return [self.cfg.horizon] + extra

    # --- sampling ---

    def draw_times(self, tau: float, m: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.uniform(size=m)
        if self.settings.time_sampling == "stratified":
            return tau * (np.arange(m) + u) / m
        return tau * u

    def _draw_terms(self, sp, decomp: InitialDecomposition, rng: RandomStreams) -> List[_TermSamples]:
        m = self.cfg.batch_size
        terms = []
        initial = rng.substream("initial")
        alpha0 = decomp.alpha0
        terms.append(_TermSamples(
            "initial", -1, -1.0,
            _raw_branch(decomp, "plus", m, initial),
            _raw_branch(decomp, "minus", m, initial) if alpha0 > 0 else None,
            1.0 + alpha0, alpha0, False))
        for h, tau in enumerate(self.horizons):
            terminal = sample_batch(sp, decomp, np.full(m, tau), rng.substream("terminal", h))
            terms.append(_TermSamples("terminal", h, 1.0, terminal.plus, terminal.minus,
                                      terminal.alpha_plus, terminal.alpha_minus, True))
            bulk_streams = rng.substream("bulk", h)
            times = self.draw_times(tau, m, bulk_streams.generator("times"))
            bulk = sample_batch(sp, decomp, times, bulk_streams)
            terms.append(_TermSamples("bulk", h, -tau, bulk.plus, bulk.minus,
                                      bulk.alpha_plus, bulk.alpha_minus, True))
        return terms

    # --- evaluation ---

    def _blocks(self, m: int) -> List[slice]:
        size = max(1, self.settings.block_size)
        return [slice(start, min(start + size, m)) for start in range(0, m, size)]

    def _bulk_values(self, tfs: TestFunctionSet, pushed: PushedBranch, V: PotentialOracle):
        def run(rows: slice):
            return residual_integrands(tfs, pushed.times[rows], pushed.x[rows], pushed.p[rows],
                                       V, self.consts, self.force_term)

        blocks = self._blocks(pushed.times.size)
        if self.threads > 1 and len(blocks) > 1:
            parts = Parallel(n_jobs=self.threads, backend="threading")(delayed(run)(rows) for rows in blocks)
        else:
            parts = [run(rows) for rows in blocks]
        integrand, amplitude, phases = (np.concatenate(arrays, axis=0) for arrays in zip(*parts))
        return integrand, (amplitude, phases)

    def _evaluate_term(self, term: _TermSamples, tfs: TestFunctionSet, V: PotentialOracle) -> None:
        branches = [("plus", term.plus)]
        if term.minus is not None:
            branches.append(("minus", term.minus))
        for branch, pushed in branches:
            if term.name == "bulk":
                values, extras = self._bulk_values(tfs, pushed, V)
            else:
                phases = tfs.phases(pushed.times, pushed.x, pushed.p)
                values, extras = np.sin(phases), (None, phases)
            setattr(term, f"values_{branch}", values)
            term.extras[branch] = extras

    def _assemble(self, terms: List[_TermSamples], k: int) -> ResidualEstimate:
        n_h = len(self.horizons)
        m = self.cfg.batch_size
        means = {"terminal": np.zeros(n_h * k), "initial": np.zeros(n_h * k), "bulk": np.zeros(n_h * k)}
        variances = np.zeros(n_h * k)
        term_variances = {name: np.zeros(n_h * k) for name in means}
        initial = next(t for t in terms if t.name == "initial")
        init_contrib = initial.contributions()
        init_mean = init_contrib.mean(axis=0)
        init_var = init_contrib.var(axis=0, ddof=1) / m if m > 1 else np.zeros(k)
        for term in terms:
            if term.name == "initial":
                continue
            cols = slice(term.horizon_index * k, (term.horizon_index + 1) * k)
            contrib = term.contributions()
            means[term.name][cols] = term.scale * contrib.mean(axis=0)
            if m > 1:
                term_variances[term.name][cols] = term.scale ** 2 * contrib.var(axis=0, ddof=1) / m
                variances[cols] += term_variances[term.name][cols]
        for h in range(n_h):
            cols = slice(h * k, (h + 1) * k)
            means["initial"][cols] = -init_mean
            term_variances["initial"][cols] = init_var
            variances[cols] += init_var

        per_test = means["terminal"] + means["initial"] + means["bulk"]
        if self.settings.variance_corrected:
            loss = float(np.mean(per_test ** 2 - variances))
        else:
            loss = float(np.mean(per_test ** 2))
        diagnostics = {**means, "horizons": list(self.horizons)}
        diagnostics.update({f"{name}_variance": v for name, v in term_variances.items()})
        estimate = ResidualEstimate(per_test, loss, variances, diagnostics=diagnostics)
        if not np.isfinite(loss) or not np.all(np.isfinite(per_test)):
            error_msg = "Residual estimate is not finite"
            self.logger.error(error_msg)
            raise NonFiniteResidualError(error_msg)
        return estimate

    def _run(self, sp, decomp: InitialDecomposition, tfs: TestFunctionSet, rng: RandomStreams):
        counter = CountingPotential(self.V)
        terms = self._draw_terms(sp, decomp, rng)
        for term in terms:
            self._evaluate_term(term, tfs, counter)
        estimate = self._assemble(terms, len(tfs))
        estimate.v_calls = counter.total_calls
        estimate.diagnostics["v_calls"] = counter.total_calls
        self.logger.debug("residual estimate", extra={"residual": estimate.as_record()})
        return estimate, terms, counter

    def estimate(self, sp, decomp: InitialDecomposition, tfs: TestFunctionSet,
                 rng: RandomStreams) -> ResidualEstimate:
        return self._run(sp, decomp, tfs, rng)[0]

    # --- gradients ---

    def _cotangents(self, estimate: ResidualEstimate, term: _TermSamples, k: int) -> np.ndarray:
        """dLoss / dc_{m,k} for the per-sample signed contributions of one term."""
        m = self.cfg.batch_size
        n_res = estimate.per_test.size
        if term.name == "initial":
            residuals = estimate.per_test.reshape(-1, k).sum(axis=0)
        else:
            residuals = estimate.per_test[term.horizon_index * k:(term.horizon_index + 1) * k]
        cot = np.broadcast_to(2.0 * residuals * term.scale / (m * n_res), (m, k)).copy()
        if self.settings.variance_corrected and m > 1:
            contrib = term.contributions()
            centred = contrib - contrib.mean(axis=0)
            copies = len(self.horizons) if term.name == "initial" else 1
            cot -= copies * term.scale ** 2 * 2.0 * centred / (m * (m - 1) * n_res)
        return cot

    def _force_partials(self, V: PotentialOracle, x: np.ndarray, w_p: np.ndarray, wrt: str) -> np.ndarray:
        """Central differences of the force term in x or in w_p: shape (M, K, N)."""
        h = self.settings.fd_step
        n = x.shape[1]
        out = np.empty((x.shape[0], w_p.shape[0], n))
        xs, ws = x[:, None, :], w_p[None, :, :]
        for i in range(n):
            step = np.zeros(n)
            step[i] = h
            if wrt == "x":
                up = self.force_term(V, xs + step, ws, self.consts.hbar)
                down = self.force_term(V, xs - step, ws, self.consts.hbar)
            else:
                up = self.force_term(V, xs, ws + step, self.consts.hbar)
                down = self.force_term(V, xs, ws - step, self.consts.hbar)
            out[..., i] = (up - down) / (2.0 * h)
        return out

    def _branch_terms(self, term: _TermSamples, branch: str, cot: np.ndarray,
                      tfs: TestFunctionSet, V: PotentialOracle, with_adversary: bool = True):
        """
        Pull the cotangent of one branch back to (dx, dp) and to the
        adversary arrays.
        """
        pushed = term.plus if branch == "plus" else term.minus
        weight = term.weight_plus if branch == "plus" else -term.weight_minus
        g = weight * cot
        amplitude, phases = term.extras[branch]
        mass = self.consts.mass
        if term.name == "bulk":
            g_phase = -g * amplitude * np.sin(phases)
            g_amp = g * np.cos(phases)
            dx = g_phase @ tfs.w_x
            dp = g_phase @ tfs.w_p + (g_amp @ tfs.w_x) / mass
            d_wx = g_phase.T @ pushed.x + (g_amp.T @ pushed.p) / mass
            d_wp = g_phase.T @ pushed.p
            if with_adversary:
                d_wp = d_wp - np.einsum("mk,mkn->kn", g_amp, self._force_partials(V, pushed.x, tfs.w_p, "w_p"))
            d_kappa = g_phase.T @ pushed.times + g_amp.sum(axis=0)
            d_b = g_phase.sum(axis=0)
            if term.differentiable and self.settings.potential_gradient == "finite_difference":
                dx = dx - np.einsum("mk,mkn->mn", g_amp, self._force_partials(V, pushed.x, tfs.w_p, "x"))
        else:
            g_phase = g * np.cos(phases)
            dx = g_phase @ tfs.w_x
            dp = g_phase @ tfs.w_p
            d_wx = g_phase.T @ pushed.x
            d_wp = g_phase.T @ pushed.p
            d_kappa = g_phase.T @ pushed.times
            d_b = g_phase.sum(axis=0)
        adversary = {"w_x": d_wx, "w_p": d_wp, "kappa": d_kappa, "b": d_b} if with_adversary else None
        return dx, dp, adversary

    def loss_and_gradients(self, sp, decomp: InitialDecomposition, tfs: TestFunctionSet,
                           rng: RandomStreams, generator_grads: bool = True,
                           adversary_grads: bool = True) -> Tuple[ResidualEstimate, Dict[str, GradientBuffer]]:
        estimate, terms, counter = self._run(sp, decomp, tfs, rng)
        k = len(tfs)
        adversary = GradientBuffer.zeros_like(tfs.as_arrays())
        trainable = getattr(sp, "trainable", False) and generator_grads
        groups = sp.parameter_groups()
        generator = {name: GradientBuffer.zeros_like(arrays) for name, arrays in groups.items()
                     if name in ("plus", "minus")}
        d_alpha = 0.0

        for term in terms:
            if not adversary_grads and not (trainable and term.differentiable):
                continue
            cot = self._cotangents(estimate, term, k)
            branches = ["plus"] + (["minus"] if term.minus is not None else [])
            for branch in branches:
                dx, dp, adv = self._branch_terms(term, branch, cot, tfs, counter, adversary_grads)
                if adv is not None:
                    adversary = adversary.add(GradientBuffer(adv))
                if trainable and term.differentiable:
                    pushed = term.plus if branch == "plus" else term.minus
                    generator[branch] = generator[branch].add(sp.branch_gradient(branch, pushed, dx, dp))
            if trainable and term.differentiable and term.minus is not None:
                d_alpha += float(np.sum(cot * (term.values_plus - term.values_minus)))

        grads = {"adversary": adversary} if adversary_grads else {}
        if trainable:
            grads.update(generator)
            grads["alpha"] = GradientBuffer({"alpha_raw": np.array([d_alpha * softplus_slope(sp.alpha_raw)])})
        estimate.diagnostics["v_calls_with_gradients"] = counter.total_calls
        return estimate, grads

    # --- verification helpers ---

    def bulk_time_quadrature(self, sp, decomp: InitialDecomposition, tfs: TestFunctionSet,
                             rng: RandomStreams, nodes: int = 64, tau: Optional[float] = None):
        """
        Gauss-Legendre estimate of int_0^tau E_t[a cos phi] dt with M samples
        per node. Returns (values, variances), each of length K.
        """
        tau = self.cfg.horizon if tau is None else tau
        xi, weights = np.polynomial.legendre.leggauss(nodes)
        times = 0.5 * tau * (xi + 1.0)
        weights = 0.5 * tau * weights
        k = len(tfs)
        m = self.cfg.batch_size
        values = np.zeros(k)
        variances = np.zeros(k)
        for j, (t, w) in enumerate(zip(times, weights)):
            sample = sample_batch(sp, decomp, np.full(m, t), rng.substream("quadrature", j))
            plus, _ = self._bulk_values(tfs, sample.plus, self.V)
            minus = self._bulk_values(tfs, sample.minus, self.V)[0] if sample.minus is not None else None
            contrib = signed_contributions(plus, minus, sample.alpha_plus, sample.alpha_minus)
            values += w * contrib.mean(axis=0)
            variances += w ** 2 * contrib.var(axis=0, ddof=1) / m
        return values, variances


def estimate_residual(sp, decomp: InitialDecomposition, tfs: TestFunctionSet, V: PotentialOracle,
                      consts: PhysicalConstants, cfg: RunConfig, rng: RandomStreams,
                      settings: Optional[ResidualSettings] = None, threads: int = 1) -> ResidualEstimate:
    """Residual estimate for every test function from three independent batches."""
    return ResidualAssembler(V, consts, cfg, settings, threads).estimate(sp, decomp, tfs, rng)


def loss_and_gradients(sp, decomp: InitialDecomposition, tfs: TestFunctionSet, V: PotentialOracle,
                       consts: PhysicalConstants, cfg: RunConfig, rng: RandomStreams,
                       settings: Optional[ResidualSettings] = None, threads: int = 1,
                       generator_grads: bool = True, adversary_grads: bool = True):
    """
    Residual estimate plus gradients keyed by parameter group: 'plus',
    'minus', 'alpha' (trainable generators only) and 'adversary'.
    """
    assembler = ResidualAssembler(V, consts, cfg, settings, threads)
    return assembler.loss_and_gradients(sp, decomp, tfs, rng, generator_grads, adversary_grads)
