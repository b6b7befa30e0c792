"""
Pushforward Module for the Wigner Pushforward Solver

The generator: prescribed signed decompositions of the initial Wigner
function, the two-branch pushforward F(t, x0, p0, z) = (x0, p0) + sqrt(t) F~(...)
with exact initial-condition enforcement, the learnable mixing weight alpha,
and the signed Monte Carlo estimator.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from autodiff_net import GradientBuffer, NetworkParams, backward, forward, init_network
from oracle import analytic_flow, excited_negative_volume, excited_state_wigner, harmonic_length
from phase_core import (DimensionMismatchError, EmptyBatchError, PhaseBatch, PhasePoint,
                        PhysicalConstants, RandomStreams, WignerError)
from potentials import UnknownNameError


class NegativeTimeError(WignerError):
    """Raised when a pushforward is queried before t = 0."""
    pass


BRANCHES = ("plus", "minus")

# smallest alpha a learnable mixing weight starts from; softplus is flat at -inf
ALPHA_FLOOR = 1e-6


def softplus(raw: float) -> float:
    return float(np.logaddexp(0.0, raw))


def softplus_slope(raw: float) -> float:
    if raw == -np.inf:
        return 0.0
    return float(0.5 * (1.0 + np.tanh(0.5 * raw)))


def inverse_softplus(alpha: float) -> float:
    """Raw scalar whose softplus is alpha; alpha = 0 maps to -inf."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if alpha == 0:
        return -np.inf
    return float(alpha + np.log(-np.expm1(-alpha)))


# --- Initial decompositions ---

class InitialDecomposition:
    """
    A prescribed split f0 = (1 + alpha0) f0+ - alpha0 f0- into two
    non-negative normalized phase-space densities with samplers.
    """

    name = "base"

    def __init__(self, dim: int, alpha0: float, params: Dict[str, float]):
        if alpha0 < 0:
            raise ValueError("alpha0 must be non-negative")
        self.dim = dim
        self.alpha0 = float(alpha0)
        self.params = dict(params)
        self.logger = logging.getLogger(self.__class__.__name__)

    @property
    def nonnegative(self) -> bool:
        return self.alpha0 == 0.0

    def sample_plus(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def sample_minus(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def mean(self) -> Tuple[np.ndarray, np.ndarray]:
        """Signed phase-space mean of f0."""
        raise NotImplementedError


class CoherentStateDecomposition(InitialDecomposition):
    """
    Gaussian coherent state of a harmonic oscillator, centred at (x0, p0).
    Non-negative, so alpha0 = 0; the minus sampler reuses the same Gaussian and
    only ever carries weight alpha.
    """

    name = "coherent"

    def __init__(self, dim: int, consts: PhysicalConstants, x0: float = 1.0, p0: float = 0.0,
                 omega: float = 1.0):
        super().__init__(dim, 0.0, {"x0": x0, "p0": p0, "omega": omega})
        self.center_x = np.full(dim, float(x0))
        self.center_p = np.full(dim, float(p0))
        self.sigma_x = np.sqrt(consts.hbar / (2.0 * consts.mass * omega))
        self.sigma_p = np.sqrt(consts.hbar * consts.mass * omega / 2.0)

    def sample_plus(self, n, rng):
        x = self.center_x + self.sigma_x * rng.standard_normal((n, self.dim))
        p = self.center_p + self.sigma_p * rng.standard_normal((n, self.dim))
        return x, p

    def sample_minus(self, n, rng):
        return self.sample_plus(n, rng)

    def mean(self):
        return self.center_x.copy(), self.center_p.copy()


class ExcitedStateDecomposition(InitialDecomposition):
    """
    First excited harmonic-oscillator state along the first coordinate
    (ground state along the others). f0+ and f0- are the normalized positive
    and negative parts; both are sampled by rejection against a Gaussian
    envelope whose bound comes from a grid scan.
    """

    name = "excited"

    def __init__(self, dim: int, consts: PhysicalConstants, omega: float = 1.0,
                 grid_points: int = 401):
        alpha0 = excited_negative_volume(grid_points=1024)
        super().__init__(dim, alpha0, {"omega": omega})
        self.length = harmonic_length(consts.hbar, consts.mass, omega)
        self.momentum_scale = consts.hbar / self.length
        u = np.linspace(-6.0, 6.0, grid_points)
        uu, vv = np.meshgrid(u, u, indexing="ij")
        proposal = np.exp(-0.5 * (uu ** 2 + vv ** 2)) / (2.0 * np.pi)
        scaled = excited_state_wigner(uu, vv, hbar=1.0, mass=1.0, omega=1.0)
        self._bounds = {
            "plus": 1.02 * float(np.max(np.maximum(scaled, 0.0) / proposal)) / (1.0 + alpha0),
            "minus": 1.02 * float(np.max(np.maximum(-scaled, 0.0) / proposal)) / alpha0,
        }
        self.logger.info(f"Excited-state decomposition: alpha0={alpha0:.6f}, "
                         f"envelopes={self._bounds}")

    def _rejection(self, branch: str, n: int, rng: np.random.Generator) -> np.ndarray:
        sign = 1.0 if branch == "plus" else -1.0
        weight = 1.0 + self.alpha0 if branch == "plus" else self.alpha0
        bound = self._bounds[branch]
        accepted = []
        count = 0
        while count < n:
            batch = max(2 * (n - count), 64)
            uv = rng.standard_normal((batch, 2))
            proposal = np.exp(-0.5 * np.sum(uv ** 2, axis=1)) / (2.0 * np.pi)
            target = np.maximum(sign * excited_state_wigner(uv[:, 0], uv[:, 1], 1.0, 1.0, 1.0), 0.0) / weight
            keep = rng.uniform(size=batch) * bound * proposal < target
            accepted.append(uv[keep])
            count += int(np.sum(keep))
        return np.concatenate(accepted)[:n]

    def _sample(self, branch: str, n: int, rng: np.random.Generator):
        uv = self._rejection(branch, n, rng)
        u = np.empty((n, self.dim))
        v = np.empty((n, self.dim))
        u[:, 0], v[:, 0] = uv[:, 0], uv[:, 1]
        if self.dim > 1:
            ground = rng.standard_normal((n, 2 * (self.dim - 1))) / np.sqrt(2.0)
            u[:, 1:], v[:, 1:] = ground[:, :self.dim - 1], ground[:, self.dim - 1:]
        return self.length * u, self.momentum_scale * v

    def sample_plus(self, n, rng):
        return self._sample("plus", n, rng)

    def sample_minus(self, n, rng):
        return self._sample("minus", n, rng)

    def mean(self):
        return np.zeros(self.dim), np.zeros(self.dim)


def build_decomposition(name: str, dim: int, consts: PhysicalConstants,
                        params: Optional[Dict[str, float]] = None) -> InitialDecomposition:
    params = dict(params or {})
    try:
        if name == "coherent":
            return CoherentStateDecomposition(dim, consts, **params)
        if name == "excited":
            return ExcitedStateDecomposition(dim, consts, **params)
    except TypeError as e:
        raise UnknownNameError(f"bad parameters for initial state {name!r}: {e}") from e
    error_msg = f"Unknown initial decomposition {name!r}; known: ['coherent', 'excited']"
    logging.getLogger('DecompositionLibrary').error(error_msg)
    raise UnknownNameError(error_msg)


# --- Generators ---

@dataclass
class PushedBranch:
    """One branch's draws and their images under the pushforward."""

    times: np.ndarray
    x0: np.ndarray
    p0: np.ndarray
    z: np.ndarray
    x: np.ndarray
    p: np.ndarray
    inputs: Optional[np.ndarray] = None

    def batch(self, horizon: float) -> PhaseBatch:
        return PhaseBatch(self.times, self.x, self.p, horizon)


@dataclass
class SignedSample:
    """Both pushed branches plus the weights alpha+ and alpha-; minus is None when skipped."""

    plus: PushedBranch
    minus: Optional[PushedBranch]
    alpha_plus: float
    alpha_minus: float


class SignedPushforward:
    """
    Two independent networks (plus/minus branch) and the raw mixing scalar.

    alpha = softplus(alpha_raw) >= 0, alpha+ = 1 + alpha, alpha- = alpha, so
    alpha+ - alpha- = 1 for every raw value.
    """

    trainable = True

    def __init__(self, params_plus: NetworkParams, params_minus: NetworkParams,
                 alpha_raw: float, dim: int, d_base: int, freeze_alpha: bool = False):
        expected_in = 1 + 2 * dim + d_base
        for params in (params_plus, params_minus):
            if params.input_width != expected_in or params.output_width != 2 * dim:
                raise DimensionMismatchError(
                    f"networks must map width {expected_in} to {2 * dim}, got "
                    f"{params.input_width} -> {params.output_width}")
        self.params_plus = params_plus
        self.params_minus = params_minus
        self.alpha_raw = float(alpha_raw)
        self.dim = dim
        self.d_base = d_base
        self.freeze_alpha = freeze_alpha

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator, hidden=(64, 64, 64),
               activation: str = "tanh", d_base: Optional[int] = None, alpha0: float = 0.0,
               freeze_alpha: bool = False) -> "SignedPushforward":
        d_base = 2 * dim if d_base is None else d_base
        widths = [1 + 2 * dim + d_base] + list(hidden) + [2 * dim]
        plus = init_network(widths, activation, rng)
        minus = init_network(widths, activation, rng)
        if not freeze_alpha:
            alpha0 = max(alpha0, ALPHA_FLOOR)
        return cls(plus, minus, inverse_softplus(alpha0), dim, d_base, freeze_alpha)

    @property
    def alpha(self) -> float:
        return softplus(self.alpha_raw)

    @property
    def alpha_plus(self) -> float:
        return 1.0 + self.alpha

    @property
    def alpha_minus(self) -> float:
        return self.alpha

    @property
    def uses_minus_branch(self) -> bool:
        return not (self.freeze_alpha and self.alpha == 0.0)

    def network(self, branch: str) -> NetworkParams:
        if branch not in BRANCHES:
            raise ValueError(f"branch must be 'plus' or 'minus', got {branch!r}")
        return self.params_plus if branch == "plus" else self.params_minus

    def push(self, branch: str, t: float, init: PhasePoint, z: np.ndarray) -> PhasePoint:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if t < 0:
            raise NegativeTimeError(f"pushforward queried at t={t}")
        if z.size != self.d_base or init.dim != self.dim:
            raise DimensionMismatchError("init or base noise has the wrong size")
        pushed = self.push_batch(branch, np.array([t]), init.x[None, :], init.p[None, :], z[None, :])
        return PhasePoint(pushed.x[0], pushed.p[0])

    def push_batch(self, branch: str, times: np.ndarray, x0: np.ndarray, p0: np.ndarray,
                   z: np.ndarray) -> PushedBranch:
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        if np.any(times < 0):
            raise NegativeTimeError("pushforward queried at negative time")
        inputs = np.concatenate([times[:, None], x0, p0, z], axis=1)
        raw = forward(self.network(branch), inputs)
        root = np.sqrt(times)[:, None]
        x = x0 + root * raw[:, :self.dim]
        p = p0 + root * raw[:, self.dim:]
        return PushedBranch(times, x0, p0, z, x, p, inputs)

    def branch_gradient(self, branch: str, pushed: PushedBranch, cot_x: np.ndarray,
                        cot_p: np.ndarray) -> GradientBuffer:
        """Pull cotangents on pushed positions/momenta back to the branch network."""
        root = np.sqrt(pushed.times)[:, None]
        cot = np.concatenate([root * cot_x, root * cot_p], axis=1)
        return backward(self.network(branch), pushed.inputs, cot)

    def parameter_groups(self) -> Dict[str, Dict[str, np.ndarray]]:
        return {
            "plus": self.params_plus.as_arrays(),
            "minus": self.params_minus.as_arrays(),
            "alpha": {"alpha_raw": np.array([self.alpha_raw])},
        }

    def with_groups(self, groups: Dict[str, Dict[str, np.ndarray]]) -> "SignedPushforward":
        plus = NetworkParams.from_arrays(groups["plus"], self.params_plus.activations) \
            if "plus" in groups else self.params_plus.copy()
        minus = NetworkParams.from_arrays(groups["minus"], self.params_minus.activations) \
            if "minus" in groups else self.params_minus.copy()
        alpha_raw = float(groups["alpha"]["alpha_raw"][0]) if "alpha" in groups else self.alpha_raw
        return SignedPushforward(plus, minus, alpha_raw, self.dim, self.d_base, self.freeze_alpha)

    def copy(self) -> "SignedPushforward":
        return self.with_groups({})


class AnalyticFlowGenerator:
    """
    Exact characteristic map of a solvable problem (free streaming or harmonic
    rotation) standing in for the networks; nothing is trainable.
    """

    trainable = False
    freeze_alpha = True

    def __init__(self, name: str, dim: int, params: Optional[Dict[str, float]] = None,
                 alpha: float = 0.0):
        self.name = name
        self.dim = dim
        self.d_base = 0
        self.alpha = float(alpha)
        self.alpha_plus = 1.0 + self.alpha
        self.alpha_minus = self.alpha
        self.uses_minus_branch = self.alpha > 0.0
        self.params = dict(params or {})
        self._flow: Callable = analytic_flow(name, self.params)

    def push_batch(self, branch: str, times, x0, p0, z) -> PushedBranch:
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        if np.any(times < 0):
            raise NegativeTimeError("pushforward queried at negative time")
        x, p = self._flow(times, x0, p0)
        return PushedBranch(times, x0, p0, z, x, p, None)

    def parameter_groups(self) -> Dict[str, Dict[str, np.ndarray]]:
        return {}


def sample_batch(sp, decomp: InitialDecomposition, times: np.ndarray,
                 rng: RandomStreams) -> SignedSample:
    """
    Draw M initial points and base-noise vectors per branch from independent
    streams and push them through the generator at the given times.
    """
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    m = times.size
    if m == 0:
        raise EmptyBatchError("sample_batch needs at least one time")

    def draw(branch: str) -> PushedBranch:
        x0, p0 = getattr(decomp, f"sample_{branch}")(m, rng.generator(f"init_{branch}"))
        z = rng.generator(f"noise_{branch}").standard_normal((m, sp.d_base))
        return sp.push_batch(branch, times, x0, p0, z)

    plus = draw("plus")
    minus = draw("minus") if sp.uses_minus_branch else None
    return SignedSample(plus, minus, sp.alpha_plus, sp.alpha_minus)


def signed_contributions(values_plus: np.ndarray, values_minus: Optional[np.ndarray],
                         alpha_plus: float, alpha_minus: float) -> np.ndarray:
    """Per-sample signed terms alpha+ g(plus_m) - alpha- g(minus_m)."""
    contrib = alpha_plus * values_plus
    if values_minus is not None:
        contrib = contrib - alpha_minus * values_minus
    return contrib


def signed_expectation(plus: PhaseBatch, minus: Optional[PhaseBatch], alpha_plus: float,
                       alpha_minus: float, g: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]):
    """(1/M) sum_m [alpha+ g(plus_m) - alpha- g(minus_m)] for a pointwise map g(times, x, p)."""
    if len(plus) == 0 or (minus is not None and len(minus) == 0):
        raise EmptyBatchError("signed expectation over an empty batch")
    if minus is not None and len(minus) != len(plus):
        raise DimensionMismatchError("plus and minus batches must share M")
    values_plus = np.asarray(g(plus.times, plus.x, plus.p), dtype=np.float64)
    values_minus = None
    if minus is not None and alpha_minus != 0.0:
        values_minus = np.asarray(g(minus.times, minus.x, minus.p), dtype=np.float64)
    mean_plus = np.mean(values_plus, axis=0)
    if values_minus is None:
        return alpha_plus * mean_plus
    return alpha_plus * mean_plus - alpha_minus * np.mean(values_minus, axis=0)


def wigner_negativity_weight(sp) -> float:
    """The current mixing weight alpha."""
    return float(sp.alpha)
