"""
Potentials Module for the Wigner Pushforward Solver

Black-box potential oracles V(x), the shipped potential library, and the
shifted-difference evaluation that stands in for the nonlocal operator in the
weak form. Only potential_difference is used during training; the derivative
based terms (classical force, truncated Moyal series) serve verification.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from phase_core import DimensionMismatchError, WignerError


class NonFinitePotentialError(WignerError):
    """Raised when the potential oracle returns NaN or Inf."""
    pass


class UnknownNameError(WignerError):
    """Raised when a library name is not registered."""
    pass


FIRST_DERIVATIVE_STEP = 1e-5
THIRD_DERIVATIVE_STEP = 1e-2


class PotentialOracle:
    """
    A black-box map x -> V(x) on R^N.

    eval_fn must accept an array of shape (..., N) and return shape (...).
    Separable potentials also carry the per-coordinate term U, with
    V(x) = sum_i U(x_i); U must act elementwise on arrays.
    """

    def __init__(self, eval_fn: Callable[[np.ndarray], np.ndarray], dim: int,
                 separable: bool = False,
                 term: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 name: str = "custom"):
        if dim < 1:
            raise ValueError("potential dimension must be at least 1")
        if separable and term is None:
            raise ValueError("a separable potential needs its per-coordinate term")
        self._eval_fn = eval_fn
        self.dim = dim
        self.separable = separable
        self._term = term
        self.name = name

    def eval(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionMismatchError(
                f"potential {self.name} expects {self.dim} coordinates, got {x.shape[-1]}")
        return np.asarray(self._eval_fn(x), dtype=np.float64)

    def term(self, u: np.ndarray) -> np.ndarray:
        if not self.separable:
            raise TypeError(f"potential {self.name} is not separable")
        return np.asarray(self._term(np.asarray(u, dtype=np.float64)), dtype=np.float64)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.eval(x)


class CountingPotential(PotentialOracle):
    """Wraps an oracle and counts point evaluations and scalar term calls."""

    def __init__(self, inner: PotentialOracle):
        super().__init__(inner._eval_fn, inner.dim, inner.separable, inner._term, inner.name)
        self.inner = inner
        self.eval_calls = 0
        self.term_calls = 0
        self._lock = threading.Lock()

    def eval(self, x: np.ndarray) -> np.ndarray:
        values = super().eval(x)
        with self._lock:
            self.eval_calls += int(np.prod(np.shape(x)[:-1], dtype=np.int64))
        return values

    def term(self, u: np.ndarray) -> np.ndarray:
        values = super().term(u)
        with self._lock:
            self.term_calls += int(np.size(u))
        return values

    @property
    def total_calls(self) -> int:
        return self.eval_calls + self.term_calls


def separable_potential(term: Callable[[np.ndarray], np.ndarray], dim: int,
                        name: str) -> PotentialOracle:
    """Build V(x) = sum_i U(x_i)."""
    return PotentialOracle(lambda x: np.sum(term(x), axis=-1), dim,
                           separable=True, term=term, name=name)


@dataclass(frozen=True)
class PotentialLibraryEntry:
    """A named potential family with its default parameters."""

    name: str
    defaults: Dict[str, float]
    builder: Callable[..., Callable[[np.ndarray], np.ndarray]]
    description: str = ""
    allowed: tuple = field(default=())

    def build(self, dim: int, params: Optional[Dict[str, float]] = None) -> PotentialOracle:
        merged = dict(self.defaults)
        for key, value in (params or {}).items():
            if key not in merged and key not in self.allowed:
                raise UnknownNameError(f"potential {self.name} has no parameter {key!r}")
            merged[key] = float(value)
        return separable_potential(self.builder(**merged), dim, self.name)


def _free(**_):
    return lambda u: np.zeros_like(u)


def _harmonic(mass: float, omega: float):
    return lambda u: 0.5 * mass * omega ** 2 * u ** 2


def _anharmonic(mass: float, omega: float, lam: float):
    return lambda u: 0.5 * mass * omega ** 2 * u ** 2 + lam * u ** 4


def _double_well(a: float, c: float):
    return lambda u: a * (u ** 2 - c ** 2) ** 2


def _cosine(v0: float, k0: float):
    return lambda u: v0 * np.cos(k0 * u)


def _polynomial(c0: float, c1: float, c2: float, c3: float, c4: float, c5: float):
    coeffs = (c0, c1, c2, c3, c4, c5)
    return lambda u: np.polynomial.polynomial.polyval(u, coeffs)


POTENTIAL_LIBRARY: Dict[str, PotentialLibraryEntry] = {
    "free": PotentialLibraryEntry("free", {}, _free, "V = 0"),
    "harmonic": PotentialLibraryEntry(
        "harmonic", {"mass": 1.0, "omega": 1.0}, _harmonic, "1/2 m w^2 x^2"),
    "anharmonic": PotentialLibraryEntry(
        "anharmonic", {"mass": 1.0, "omega": 1.0, "lam": 0.1}, _anharmonic,
        "1/2 m w^2 x^2 + lam x^4"),
    "double_well": PotentialLibraryEntry(
        "double_well", {"a": 0.25, "c": 1.0}, _double_well, "a (x^2 - c^2)^2"),
    "cosine": PotentialLibraryEntry(
        "cosine", {"v0": 1.0, "k0": 1.0}, _cosine, "v0 cos(k0 x)"),
    "polynomial": PotentialLibraryEntry(
        "polynomial", {"c0": 0.0, "c1": 0.0, "c2": 0.0, "c3": 0.0, "c4": 0.0, "c5": 0.0},
        _polynomial, "sum_n c_n x^n, degree <= 5"),
}


def build_potential(name: str, dim: int, params: Optional[Dict[str, float]] = None) -> PotentialOracle:
    """
    Construct a library potential in dimension dim (separable extension).

    Raises:
        UnknownNameError: If the name or one of the parameters is not registered
    """
    entry = POTENTIAL_LIBRARY.get(name)
    if entry is None:
        error_msg = f"Unknown potential {name!r}; known: {sorted(POTENTIAL_LIBRARY)}"
        logging.getLogger('PotentialLibrary').error(error_msg)
        raise UnknownNameError(error_msg)
    return entry.build(dim, params)


def _check_shapes(V: PotentialOracle, x: np.ndarray, w_p: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    w_p = np.asarray(w_p, dtype=np.float64)
    if x.shape[-1] != V.dim or w_p.shape[-1] != V.dim:
        raise DimensionMismatchError(
            f"expected {V.dim} coordinates, got x {x.shape[-1]} and w_p {w_p.shape[-1]}")
    return x, w_p


def _finite(values: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NonFinitePotentialError(f"potential returned a non-finite value in {where}")
    return values


def potential_difference(V: PotentialOracle, x: np.ndarray, w_p: np.ndarray, hbar: float,
                         fast_path: bool = False) -> np.ndarray:
    """
    [V(x + hbar/2 w_p) - V(x - hbar/2 w_p)] / hbar.

    x and w_p broadcast against each other over leading axes; the last axis
    holds the N coordinates. Two evaluations of V per point, or 2N scalar term
    calls on the separable fast path.
    """
    x, w_p = _check_shapes(V, x, w_p)
    shift = (0.5 * hbar) * w_p
    if fast_path and V.separable:
        upper = V.term(x + shift)
        lower = V.term(x - shift)
        diff = np.sum(_finite(upper, "potential_difference") - _finite(lower, "potential_difference"),
                      axis=-1)
    else:
        upper = _finite(V.eval(x + shift), "potential_difference")
        lower = _finite(V.eval(x - shift), "potential_difference")
        diff = upper - lower
    return diff / hbar


def classical_force_term(V: PotentialOracle, x: np.ndarray, w_p: np.ndarray,
                         fd_step: float = FIRST_DERIVATIVE_STEP) -> np.ndarray:
    """Central-difference estimate of grad V(x) . w_p using 2N evaluations of V."""
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    x, w_p = _check_shapes(V, x, w_p)
    total = np.zeros(np.broadcast_shapes(x.shape, w_p.shape)[:-1])
    for i in range(V.dim):
        step = np.zeros(V.dim)
        step[i] = fd_step
        slope = (V.eval(x + step) - V.eval(x - step)) / (2.0 * fd_step)
        total = total + _finite(slope, "classical_force_term") * w_p[..., i]
    return total


def _directional(V: PotentialOracle, x: np.ndarray, w: np.ndarray, s: float) -> np.ndarray:
    return V.eval(x + s * w)


def directional_derivatives(V: PotentialOracle, x: np.ndarray, w: np.ndarray,
                            fd_step: float = THIRD_DERIVATIVE_STEP):
    """
    Third and fifth directional derivatives (w . grad)^3 V and (w . grad)^5 V.

    Six-point central stencils along w, exact for polynomials up to degree six.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    x, w = _check_shapes(V, x, w)
    h = fd_step
    f = {k: _directional(V, x, w, k * h) for k in (-3, -2, -1, 1, 2, 3)}
    third = (-f[3] + 8.0 * f[2] - 13.0 * f[1] + 13.0 * f[-1] - 8.0 * f[-2] + f[-3]) / (8.0 * h ** 3)
    fifth = (f[3] - 4.0 * f[2] + 5.0 * f[1] - 5.0 * f[-1] + 4.0 * f[-2] - f[-3]) / (2.0 * h ** 5)
    return _finite(third, "directional_derivatives"), _finite(fifth, "directional_derivatives")


def moyal_truncated_term(V: PotentialOracle, x: np.ndarray, w_p: np.ndarray, hbar: float,
                         order: int = 3, fd_step: float = THIRD_DERIVATIVE_STEP) -> np.ndarray:
    """
    Moyal series of the shifted difference truncated at odd order 1, 3 or 5.

    Order 3 adds (hbar^2/24) * sum_ijk V_ijk w_i w_j w_k, order 5 adds
    (hbar^4/1920) * (w . grad)^5 V.
    """
    if order not in (1, 3, 5):
        raise ValueError(f"order must be 1, 3 or 5, got {order}")
    x, w_p = _check_shapes(V, x, w_p)
    result = classical_force_term(V, x, w_p)
    if order == 1:
        return result

    third, fifth = directional_derivatives(V, x, w_p, fd_step)
    result = result + (hbar ** 2 / 24.0) * third
    if order == 3:
        return result
    return result + (hbar ** 4 / 1920.0) * fifth
