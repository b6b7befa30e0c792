"""
Oracle Module for the Wigner Pushforward Solver

Grid-based ground truth in one dimension: spectral evaluation of the nonlocal
potential operator, quadrature of weak-form integrals, a split-step
Schrodinger solver with its Wigner transform, and closed-form solutions.
None of this touches the neural generator.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from phase_core import WignerError
from potentials import (PotentialOracle, UnknownNameError, build_potential, classical_force_term,
                        directional_derivatives, potential_difference)


class GridEdgeDecayError(WignerError):
    """Raised when a grid function does not decay at the grid boundary."""
    pass


class ImaginaryResidueError(WignerError):
    """Raised when a spectral result that must be real is not."""
    pass


class AliasingError(WignerError):
    """Raised when a time step would alias the kinetic propagator."""
    pass


class NormDriftError(WignerError):
    """Raised when the split-step evolution loses unitarity."""
    pass


EDGE_TOLERANCE = 1e-10
IMAGINARY_TOLERANCE = 1e-8
NORM_TOLERANCE = 1e-10
SPECTRAL_FLOOR = 1e-15


def uniform_grid(n: int, lower: float, upper: float) -> np.ndarray:
    """n nodes with spacing (upper - lower) / n, starting at lower."""
    return lower + (upper - lower) * np.arange(n) / n


def _spacing(nodes: np.ndarray, name: str) -> float:
    nodes = np.asarray(nodes, dtype=np.float64)
    if nodes.ndim != 1 or nodes.size < 2:
        raise ValueError(f"{name} grid needs at least two nodes")
    steps = np.diff(nodes)
    if not np.allclose(steps, steps[0], rtol=1e-10, atol=0.0) or steps[0] <= 0:
        raise ValueError(f"{name} grid must be uniform and increasing")
    return float(steps[0])


def _trapezoid_weights(n: int, step: float) -> np.ndarray:
    weights = np.full(n, step)
    weights[0] = weights[-1] = 0.5 * step
    return weights


@dataclass(frozen=True)
class GridField:
    """Values f(x_i, p_j) on a uniform rectangular 1D phase-space grid."""

    x: np.ndarray
    p: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        _spacing(x, "x")
        _spacing(p, "p")
        if p.size & (p.size - 1):
            raise ValueError(f"the p grid size must be a power of two, got {p.size}")
        if values.shape != (x.size, p.size):
            raise ValueError(f"values must have shape {(x.size, p.size)}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                      x: np.ndarray, p: np.ndarray) -> "GridField":
        xx, pp = np.meshgrid(x, p, indexing="ij")
        return cls(x, p, fn(xx, pp))

    @property
    def dx(self) -> float:
        return _spacing(self.x, "x")

    @property
    def dp(self) -> float:
        return _spacing(self.p, "p")

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.p, indexing="ij")

    def integrate(self, integrand: Optional[np.ndarray] = None) -> float:
        """Trapezoidal rule of values (or of a same-shaped integrand) over the grid."""
        data = self.values if integrand is None else np.asarray(integrand)
        wx = _trapezoid_weights(self.x.size, self.dx)
        wp = _trapezoid_weights(self.p.size, self.dp)
        return float(wx @ data @ wp)

    def with_values(self, values: np.ndarray) -> "GridField":
        return GridField(self.x, self.p, values)

    def check_edge_decay(self, tol: float = EDGE_TOLERANCE) -> None:
        v = self.values
        edge = max(np.max(np.abs(v[0])), np.max(np.abs(v[-1])),
                   np.max(np.abs(v[:, 0])), np.max(np.abs(v[:, -1])))
        if edge > tol:
            error_msg = f"grid field does not decay at the edges: max |f| = {edge:.3e} > {tol:.1e}"
            logging.getLogger('GridOracle').error(error_msg)
            raise GridEdgeDecayError(error_msg)


@dataclass(frozen=True)
class WaveFunctionGrid:
    """Complex wave function on a uniform x grid."""

    x: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        _spacing(x, "x")
        values = np.asarray(self.values, dtype=np.complex128)
        if values.shape != x.shape:
            raise ValueError("wave function values must match the x grid")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "values", values)

    @property
    def dx(self) -> float:
        return _spacing(self.x, "x")

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.dx)

    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def check_edge_decay(self, tol: float = EDGE_TOLERANCE) -> None:
        edge = max(abs(self.values[0]), abs(self.values[-1]))
        if edge > tol:
            error_msg = f"wave function does not decay at the edges: |psi| = {edge:.3e}"
            logging.getLogger('GridOracle').error(error_msg)
            raise GridEdgeDecayError(error_msg)


# --- Closed-form states ---

def harmonic_length(hbar: float, mass: float, omega: float) -> float:
    return float(np.sqrt(hbar / (mass * omega)))


def ground_state_wigner(x, p, hbar=1.0, mass=1.0, omega=1.0, x0=0.0, p0=0.0):
    ell = harmonic_length(hbar, mass, omega)
    r2 = ((x - x0) / ell) ** 2 + ((p - p0) * ell / hbar) ** 2
    return np.exp(-r2) / (np.pi * hbar)


def excited_state_wigner(x, p, hbar=1.0, mass=1.0, omega=1.0):
    """First excited oscillator state: (2 r^2 - 1) exp(-r^2) / (pi hbar)."""
    ell = harmonic_length(hbar, mass, omega)
    r2 = (np.asarray(x) / ell) ** 2 + (np.asarray(p) * ell / hbar) ** 2
    return (2.0 * r2 - 1.0) * np.exp(-r2) / (np.pi * hbar)


def gaussian_packet(x: np.ndarray, x0: float, p0: float, sigma: float, hbar: float) -> WaveFunctionGrid:
    """Normalized Gaussian with position spread sigma and mean momentum p0."""
    values = (2.0 * np.pi * sigma ** 2) ** -0.25 * np.exp(
        -(x - x0) ** 2 / (4.0 * sigma ** 2) + 1j * p0 * x / hbar)
    return WaveFunctionGrid(x, values)


def harmonic_eigenstate(x: np.ndarray, level: int, hbar: float = 1.0, mass: float = 1.0,
                        omega: float = 1.0) -> WaveFunctionGrid:
    if level not in (0, 1):
        raise ValueError("only the ground and first excited states are provided")
    ell = harmonic_length(hbar, mass, omega)
    u = x / ell
    ground = (np.pi * ell ** 2) ** -0.25 * np.exp(-0.5 * u ** 2)
    values = ground if level == 0 else np.sqrt(2.0) * u * ground
    return WaveFunctionGrid(x, values.astype(np.complex128))


def negative_volume(f: GridField) -> float:
    """Integral of max(-f, 0) over the grid."""
    return f.integrate(np.maximum(-f.values, 0.0))


def excited_negative_volume(grid_points: int = 1024, half_width: float = 6.0) -> float:
    """Negative volume of the first excited state by grid quadrature of its closed form."""
    nodes = uniform_grid(grid_points, -half_width, half_width)
    field = GridField.from_function(excited_state_wigner, nodes, nodes)
    return negative_volume(field)


# --- Analytic characteristic flows ---

def analytic_flow(name: str, params: Optional[Dict[str, float]] = None) -> Callable:
    """
    Exact phase-space flow (times, x, p) -> (x_t, p_t) of a quadratic problem.

    'free': straight-line streaming; 'harmonic': rotation at frequency omega.
    """
    params = dict(params or {})
    mass = float(params.get("mass", 1.0))
    if name == "free":
        def free(times, x, p):
            t = np.reshape(np.asarray(times, dtype=np.float64), (-1,) + (1,) * (np.ndim(x) - 1))
            return x + p * t / mass, np.array(p, dtype=np.float64, copy=True)
        return free
    if name == "harmonic":
        omega = float(params.get("omega", 1.0))

        def harmonic(times, x, p):
            t = np.reshape(np.asarray(times, dtype=np.float64), (-1,) + (1,) * (np.ndim(x) - 1))
            c, s = np.cos(omega * t), np.sin(omega * t)
            return x * c + p * s / (mass * omega), p * c - mass * omega * x * s
        return harmonic
    error_msg = f"Unknown analytic solution {name!r}; known: ['free', 'harmonic']"
    logging.getLogger('GridOracle').error(error_msg)
    raise UnknownNameError(error_msg)


@dataclass(frozen=True)
class AnalyticSolution:
    """Closed-form transport at a fixed time: f(t, z) = f0(flow_{-t}(z))."""

    name: str
    t: float
    params: Dict[str, float]

    def _apply(self, t: float, x, p):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        p = np.atleast_1d(np.asarray(p, dtype=np.float64))
        return analytic_flow(self.name, self.params)(np.full(x.shape[0], t), x, p)

    def flow(self, x, p):
        return self._apply(self.t, x, p)

    def backward_flow(self, x, p):
        return self._apply(-self.t, x, p)

    def density(self, f0: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Callable:
        def f_t(x, p):
            shape = np.shape(x)
            x_back, p_back = self.backward_flow(np.reshape(x, -1), np.reshape(p, -1))
            return np.reshape(f0(x_back, p_back), shape)
        return f_t


def analytic_solutions(name: str, params: Optional[Dict[str, float]], t: float) -> AnalyticSolution:
    analytic_flow(name, params)
    return AnalyticSolution(name, float(t), dict(params or {}))


# --- Spectral operators ---

def _momentum_frequencies(f: GridField) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(f.p.size, d=f.dp)


def _conjugate_shifts(f: GridField, hbar: float) -> np.ndarray:
    return 2.0 * np.pi * hbar * np.fft.fftfreq(f.p.size, d=f.dp)


def _clean_spectrum(spectrum: np.ndarray) -> np.ndarray:
    spectrum = spectrum.copy()
    spectrum[:, spectrum.shape[1] // 2] = 0.0
    spectrum[np.abs(spectrum) < SPECTRAL_FLOOR * np.max(np.abs(spectrum))] = 0.0
    return spectrum


def _real_part(values: np.ndarray, where: str) -> np.ndarray:
    scale = max(float(np.max(np.abs(values.real))), 1e-300)
    residue = float(np.max(np.abs(values.imag))) / scale
    logging.getLogger('GridOracle').debug(f"{where}: imaginary residue {residue:.2e}")
    if residue > IMAGINARY_TOLERANCE:
        error_msg = f"{where}: imaginary residue {residue:.2e} exceeds {IMAGINARY_TOLERANCE:.0e}"
        logging.getLogger('GridOracle').error(error_msg)
        raise ImaginaryResidueError(error_msg)
    return values.real


def theta_apply(V: PotentialOracle, f: GridField, hbar: float) -> GridField:
    """
    Apply the nonlocal potential operator by its Fourier definition.

    With y = 2 pi hbar * fftfreq(n_p, dp) the conjugate shift grid, the result
    is ifft_p( [V(x + y/2) - V(x - y/2)] / (i hbar) * fft_p(f) ). The Nyquist
    mode is dropped and spectral coefficients below the round-off floor are
    zeroed before the kernel multiplies them.
    """
    f.check_edge_decay()
    y = _conjugate_shifts(f, hbar)
    xs = f.x[:, None]
    kernel = (V.eval((xs + 0.5 * y)[..., None]) - V.eval((xs - 0.5 * y)[..., None])) / (1j * hbar)
    spectrum = _clean_spectrum(np.fft.fft(f.values, axis=1))
    result = np.fft.ifft(kernel * spectrum, axis=1)
    return f.with_values(_real_part(result, "theta_apply"))


def spectral_p_derivative(f: GridField, order: int = 1) -> GridField:
    k = _momentum_frequencies(f)
    spectrum = np.fft.fft(f.values, axis=1)
    if f.p.size % 2 == 0:
        spectrum[:, f.p.size // 2] = 0.0
    result = np.fft.ifft(spectrum * (1j * k) ** order, axis=1)
    return f.with_values(_real_part(result, "spectral_p_derivative"))


def truncated_operator_apply(V: PotentialOracle, f: GridField, hbar: float, order: int = 1) -> GridField:
    """
    Moyal expansion of the operator truncated at odd order:
    -V' f_p + (hbar^2/24) V''' f_ppp - (hbar^4/1920) V^(5) f_ppppp.
    """
    if order not in (1, 3, 5):
        raise ValueError(f"order must be 1, 3 or 5, got {order}")
    xs = f.x[:, None]
    unit = np.ones(1)
    slope = classical_force_term(V, xs, unit)[:, None]
    result = -slope * spectral_p_derivative(f, 1).values
    if order >= 3:
        third, fifth = directional_derivatives(V, xs, unit)
        result = result + (hbar ** 2 / 24.0) * third[:, None] * spectral_p_derivative(f, 3).values
        if order == 5:
            result = result - (hbar ** 4 / 1920.0) * fifth[:, None] * spectral_p_derivative(f, 5).values
    return f.with_values(result)


def _grid_phase(f: GridField, tf, t: float) -> np.ndarray:
    xx, pp = f.mesh()
    return tf.w_x[0] * xx + tf.w_p[0] * pp + tf.kappa * t + tf.b


def _check_1d(V: PotentialOracle, tf=None) -> None:
    if V.dim != 1 or (tf is not None and tf.dim != 1):
        raise WignerError("the grid oracle is one-dimensional")


def weak_integral_quadrature(V: PotentialOracle, f: GridField, tf, hbar: float, t: float = 0.0) -> float:
    """Trapezoidal integral of theta_apply(f) * sin(phase)."""
    _check_1d(V, tf)
    theta = theta_apply(V, f, hbar)
    return f.integrate(theta.values * np.sin(_grid_phase(f, tf, t)))


def reduced_integral(V: PotentialOracle, f: GridField, tf, hbar: float, t: float = 0.0) -> float:
    """Trapezoidal integral of f * D/hbar * cos(phase) on the same grid."""
    _check_1d(V, tf)
    diff = potential_difference(V, f.x[:, None], tf.w_p[None, :], hbar)
    return f.integrate(f.values * diff[:, None] * np.cos(_grid_phase(f, tf, t)))


# --- Reference dynamics ---

def split_step_evolve(psi0: WaveFunctionGrid, V: PotentialOracle, hbar: float, mass: float,
                      dt: float, steps: int, norm_tol: float = NORM_TOLERANCE) -> WaveFunctionGrid:
    """
    Strang splitting: half potential kick, exact kinetic step in Fourier
    space, half potential kick.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if dt == 0 or steps == 0:
        return psi0
    x = psi0.x
    k = 2.0 * np.pi * np.fft.fftfreq(x.size, d=psi0.dx)
    kinetic_phase = hbar * k ** 2 / (2.0 * mass)
    if abs(dt) * float(np.max(kinetic_phase)) >= np.pi:
        error_msg = f"time step {dt} aliases the kinetic propagator (max phase {abs(dt) * np.max(kinetic_phase):.3f})"
        logging.getLogger('SplitStepSolver').error(error_msg)
        raise AliasingError(error_msg)

    half_kick = np.exp(-0.5j * dt * V.eval(x[:, None]) / hbar)
    drift = np.exp(-1j * dt * kinetic_phase)
    psi = psi0.values.copy()
    norm = psi0.norm
    for step in range(steps):
        psi = half_kick * np.fft.ifft(drift * np.fft.fft(half_kick * psi))
        new_norm = float(np.sum(np.abs(psi) ** 2) * psi0.dx)
        if abs(new_norm - norm) > norm_tol:
            error_msg = f"norm drift {abs(new_norm - norm):.2e} at step {step}"
            logging.getLogger('SplitStepSolver').error(error_msg)
            raise NormDriftError(error_msg)
        norm = new_norm
    return WaveFunctionGrid(x, psi)


def wigner_transform(psi: WaveFunctionGrid, hbar: float, p: np.ndarray) -> GridField:
    """
    f(x, p) = (1/2 pi hbar) int psi*(x + y/2) psi(x - y/2) exp(i p y / hbar) dy,
    with y = 2 s dx so both arguments land on grid nodes.
    """
    psi.check_edge_decay()
    n = psi.x.size
    dx = psi.dx
    shifts = np.arange(-(n - 1), n)
    idx = np.arange(n)[:, None]
    plus, minus = idx + shifts, idx - shifts
    valid = (plus >= 0) & (plus < n) & (minus >= 0) & (minus < n)
    values = psi.values
    corr = np.where(valid, np.conj(values[np.clip(plus, 0, n - 1)]) * values[np.clip(minus, 0, n - 1)], 0.0)
    phases = np.exp(1j * np.outer(2.0 * shifts * dx, p) / hbar)
    f = (2.0 * dx / (2.0 * np.pi * hbar)) * (corr @ phases)
    return GridField(psi.x, p, _real_part(f, "wigner_transform"))


def momentum_density(psi: WaveFunctionGrid, hbar: float, p: np.ndarray) -> np.ndarray:
    """|psi_hat(p)|^2 by direct transform on an arbitrary p grid."""
    amplitude = (np.exp(-1j * np.outer(p, psi.x) / hbar) @ psi.values) * psi.dx / np.sqrt(2.0 * np.pi * hbar)
    return np.abs(amplitude) ** 2


def evolution_weak_residual(psi0: WaveFunctionGrid, V: PotentialOracle, hbar: float, mass: float,
                            horizon: float, tf, p: np.ndarray, nodes: int = 32,
                            max_dt: float = 1e-3) -> float:
    """
    Weak-form residual of the grid solution: boundary terms at 0 and T minus
    the Gauss-Legendre time integral of the bulk integrand.
    """
    _check_1d(V, tf)
    xi, weights = np.polynomial.legendre.leggauss(nodes)
    times = 0.5 * horizon * (xi + 1.0)
    weights = 0.5 * horizon * weights
    diff = potential_difference(V, psi0.x[:, None], tf.w_p[None, :], hbar)

    def snapshot(psi: WaveFunctionGrid) -> GridField:
        return wigner_transform(psi, hbar, p)

    def advance(psi: WaveFunctionGrid, span: float) -> WaveFunctionGrid:
        if span <= 0:
            return psi
        steps = int(np.ceil(span / max_dt))
        return split_step_evolve(psi, V, hbar, mass, span / steps, steps)

    f0 = snapshot(psi0)
    start = f0.integrate(f0.values * np.sin(_grid_phase(f0, tf, 0.0)))
    bulk = 0.0
    psi, clock = psi0, 0.0
    for t, weight in zip(times, weights):
        psi = advance(psi, t - clock)
        clock = t
        f = snapshot(psi)
        _, pp = f.mesh()
        amplitude = tf.kappa + tf.w_x[0] * pp / mass - diff[:, None]
        bulk += weight * f.integrate(f.values * amplitude * np.cos(_grid_phase(f, tf, t)))
    psi = advance(psi, horizon - clock)
    f_end = snapshot(psi)
    end = f_end.integrate(f_end.values * np.sin(_grid_phase(f_end, tf, horizon)))
    return float(end - start - bulk)


# --- Sweeps ---

SWEEP_POTENTIALS = ("harmonic", "anharmonic", "double_well", "cosine")
SWEEP_STATES = ("gaussian", "excited")


def sweep_state(name: str, x: np.ndarray, p: np.ndarray) -> GridField:
    """Unit-scale test states on the grid, independent of the operator's hbar."""
    if name == "gaussian":
        return GridField.from_function(ground_state_wigner, x, p)
    if name == "excited":
        return GridField.from_function(excited_state_wigner, x, p)
    raise UnknownNameError(f"unknown sweep state {name!r}")


def equivalence_sweep(tfs, hbars: Sequence[float] = (0.25, 1.0, 4.0),
                      potentials: Sequence[str] = SWEEP_POTENTIALS, states: Sequence[str] = SWEEP_STATES,
                      n_grid: int = 256, half_width: float = 8.0) -> pd.DataFrame:
    """
    Compare the direct operator quadrature with the reduced finite-difference
    integral for every (potential, hbar, state, test function).
    """
    logger = logging.getLogger('GridOracle')
    nodes = uniform_grid(n_grid, -half_width, half_width)
    rows = []
    for pot_name in potentials:
        V = build_potential(pot_name, 1)
        for hbar in hbars:
            for state in states:
                f = sweep_state(state, nodes, nodes)
                theta = theta_apply(V, f, hbar)
                for k, tf in enumerate(tfs.members):
                    lhs = f.integrate(theta.values * np.sin(_grid_phase(f, tf, 0.0)))
                    rhs = reduced_integral(V, f, tf, hbar)
                    abs_err = abs(lhs - rhs)
                    rows.append({"potential": pot_name, "hbar": hbar, "state": state, "tf_id": k,
                                 "lhs": lhs, "rhs": rhs, "abs_err": abs_err,
                                 "rel_err": abs_err / max(abs(rhs), 1e-12)})
        logger.info(f"Equivalence sweep finished potential {pot_name}")
    return pd.DataFrame(rows)
