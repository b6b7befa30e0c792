"""
Test Function Module for the Wigner Pushforward Solver

The adversary: plane-wave test functions sin(w_x.x + w_p.p + kappa t + b),
their phase and trigonometric evaluations, and the pointwise residual
integrand [kappa + w_x.p/m - D/hbar] cos(phase) of the weak form.
"""

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from phase_core import DimensionMismatchError, PhasePoint, PhysicalConstants
from potentials import PotentialOracle, classical_force_term, potential_difference


ForceTerm = Callable[[PotentialOracle, np.ndarray, np.ndarray, float], np.ndarray]


def quantum_force(V: PotentialOracle, x: np.ndarray, w_p: np.ndarray, hbar: float) -> np.ndarray:
    return potential_difference(V, x, w_p, hbar)


def quantum_force_separable(V: PotentialOracle, x: np.ndarray, w_p: np.ndarray, hbar: float) -> np.ndarray:
    return potential_difference(V, x, w_p, hbar, fast_path=True)


def classical_force(V: PotentialOracle, x: np.ndarray, w_p: np.ndarray, hbar: float) -> np.ndarray:
    return classical_force_term(V, x, w_p)


def select_force_term(mode: str, separable_fast_path: bool = False) -> ForceTerm:
    """Pick the V-dependent part of the integrand: 'quantum' or 'classical'."""
    if mode == "quantum":
        return quantum_force_separable if separable_fast_path else quantum_force
    if mode == "classical":
        return classical_force
    raise ValueError(f"unknown force term mode {mode!r}")


@dataclass(frozen=True)
class TestFunction:
    """One plane wave: frequencies w_x, w_p (length N), time frequency kappa and offset b."""

    __test__ = False

    w_x: np.ndarray
    w_p: np.ndarray
    kappa: float
    b: float

    def __post_init__(self):
        w_x = np.asarray(self.w_x, dtype=np.float64).reshape(-1)
        w_p = np.asarray(self.w_p, dtype=np.float64).reshape(-1)
        if w_x.shape != w_p.shape:
            raise DimensionMismatchError("w_x and w_p must have the same length")
        values = np.concatenate([w_x, w_p, [self.kappa, self.b]])
        if not np.all(np.isfinite(values)):
            raise ValueError("test function parameters must be finite")
        object.__setattr__(self, "w_x", w_x)
        object.__setattr__(self, "w_p", w_p)
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self) -> int:
        return self.w_x.size


class TestFunctionSet:
    """
    K plane waves stored column-wise: w_x (K, N), w_p (K, N), kappa (K,), b (K,).

    The arrays are the adversary's parameter group; gradients use the same
    names and shapes (see as_arrays).
    """

    __test__ = False

    PARAM_NAMES = ("w_x", "w_p", "kappa", "b")

    def __init__(self, w_x: np.ndarray, w_p: np.ndarray, kappa: np.ndarray, b: np.ndarray):
        self.w_x = np.array(w_x, dtype=np.float64, ndmin=2)
        self.w_p = np.array(w_p, dtype=np.float64, ndmin=2)
        self.kappa = np.array(kappa, dtype=np.float64).reshape(-1)
        self.b = np.array(b, dtype=np.float64).reshape(-1)
        k = self.w_x.shape[0]
        if k < 1:
            raise ValueError("a test set needs at least one member")
        if self.w_p.shape != self.w_x.shape or self.kappa.shape != (k,) or self.b.shape != (k,):
            raise DimensionMismatchError("test-set arrays disagree in shape")

    def __len__(self) -> int:
        return self.w_x.shape[0]

    @property
    def dim(self) -> int:
        return self.w_x.shape[1]

    def member(self, k: int) -> TestFunction:
        return TestFunction(self.w_x[k], self.w_p[k], self.kappa[k], self.b[k])

    @property
    def members(self):
        return [self.member(k) for k in range(len(self))]

    def as_arrays(self) -> Dict[str, np.ndarray]:
        return {"w_x": self.w_x, "w_p": self.w_p, "kappa": self.kappa, "b": self.b}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "TestFunctionSet":
        return cls(arrays["w_x"], arrays["w_p"], arrays["kappa"], arrays["b"])

    def copy(self) -> "TestFunctionSet":
        return TestFunctionSet(self.w_x.copy(), self.w_p.copy(), self.kappa.copy(), self.b.copy())

    def clip(self, scale_x: float, scale_p: float, scale_kappa: float) -> "TestFunctionSet":
        """Clip frequencies back into their boxes; offsets are left alone."""
        return TestFunctionSet(np.clip(self.w_x, -scale_x, scale_x),
                               np.clip(self.w_p, -scale_p, scale_p),
                               np.clip(self.kappa, -scale_kappa, scale_kappa),
                               self.b.copy())

    def phases(self, times: np.ndarray, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Phases for every (sample, member) pair: shape (M, K)."""
        x = np.atleast_2d(x)
        p = np.atleast_2d(p)
        if x.shape[1] != self.dim or p.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"samples have {x.shape[1]} coordinates, test set has {self.dim}")
        times = np.broadcast_to(np.asarray(times, dtype=np.float64).reshape(-1, 1), (x.shape[0], 1))
        return x @ self.w_x.T + p @ self.w_p.T + times * self.kappa + self.b


def init_test_set(K: int, N: int, scale_x: float, scale_p: float, scale_kappa: float,
                  rng: np.random.Generator) -> TestFunctionSet:
    """Frequencies uniform on [-scale, scale] per component, offsets uniform on [0, 2 pi)."""
    if K < 1:
        raise ValueError("K must be at least 1")
    w_x = rng.uniform(-scale_x, scale_x, size=(K, N)) if scale_x > 0 else np.zeros((K, N))
    w_p = rng.uniform(-scale_p, scale_p, size=(K, N)) if scale_p > 0 else np.zeros((K, N))
    kappa = rng.uniform(-scale_kappa, scale_kappa, size=K) if scale_kappa > 0 else np.zeros(K)
    b = rng.uniform(0.0, 2.0 * np.pi, size=K)
    return TestFunctionSet(w_x, w_p, kappa, b)


def _check_point(tf: TestFunction, pt: PhasePoint) -> None:
    if tf.dim != pt.dim:
        raise DimensionMismatchError(f"test function has dimension {tf.dim}, point has {pt.dim}")


def phase(tf: TestFunction, t: float, pt: PhasePoint) -> float:
    _check_point(tf, pt)
    return float(tf.w_x @ pt.x + tf.w_p @ pt.p + tf.kappa * t + tf.b)


def test_value(tf: TestFunction, t: float, pt: PhasePoint) -> float:
    return float(np.sin(phase(tf, t, pt)))


def test_cos(tf: TestFunction, t: float, pt: PhasePoint) -> float:
    return float(np.cos(phase(tf, t, pt)))


test_value.__test__ = False
test_cos.__test__ = False


def residual_integrand(tf: TestFunction, t: float, pt: PhasePoint, V: PotentialOracle,
                       consts: PhysicalConstants, force_term: ForceTerm = quantum_force) -> float:
    """[kappa + w_x.p/m - D/hbar] cos(phase) at one phase-space point."""
    _check_point(tf, pt)
    force = float(force_term(V, pt.x, tf.w_p, consts.hbar))
    return (tf.kappa + float(tf.w_x @ pt.p) / consts.mass - force) * test_cos(tf, t, pt)


def residual_integrands(tfs: TestFunctionSet, times: np.ndarray, x: np.ndarray, p: np.ndarray,
                        V: PotentialOracle, consts: PhysicalConstants,
                        force_term: ForceTerm = quantum_force):
    """
    Vectorized integrand over M samples and K test functions.

    Returns:
        Tuple (integrand, amplitude, phases), each of shape (M, K); the
        integrand is amplitude * cos(phases).
    """
    phases = tfs.phases(times, x, p)
    force = force_term(V, x[:, None, :], tfs.w_p[None, :, :], consts.hbar)
    amplitude = tfs.kappa[None, :] + (p @ tfs.w_x.T) / consts.mass - force
    return amplitude * np.cos(phases), amplitude, phases
