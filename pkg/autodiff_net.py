"""
Autodiff Network Module for the Wigner Pushforward Solver

A small differentiable core: fixed-topology feed-forward networks with exact
reverse-mode gradients, gradient buffers keyed like the parameter groups they
mirror, and the adaptive-moment optimizer used for both descent (generator)
and ascent (adversary) steps.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from phase_core import WignerError


class WidthMismatchError(WignerError):
    """Raised when an input width disagrees with the first layer."""
    pass


class ShapeMismatchError(WignerError):
    """Raised when gradients or cotangents do not mirror their parameters."""
    pass


ACTIVATIONS = ("tanh", "identity")


def _activate(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "tanh":
        return np.tanh(z)
    if tag == "identity":
        return z
    raise ValueError(f"unknown activation {tag!r}")


def _activation_slope(tag: str, a: np.ndarray) -> np.ndarray:
    # expressed through the activation output
    if tag == "tanh":
        return 1.0 - a * a
    return np.ones_like(a)


class NetworkParams:
    """
    Layer list of a feed-forward network.

    Layer l maps width widths[l] to widths[l+1] through W_l (out, in) and b_l
    (out,). Hidden layers apply activations[l]; the output layer is linear.
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray],
                 activations: Sequence[str]):
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in biases]
        self.activations = list(activations)
        if len(self.weights) != len(self.biases) or len(self.weights) < 1:
            raise ShapeMismatchError("weights and biases must pair up, at least one layer")
        if len(self.activations) != len(self.weights) - 1:
            raise ShapeMismatchError("one activation tag per hidden layer")
        for tag in self.activations:
            if tag not in ACTIVATIONS:
                raise ValueError(f"unknown activation {tag!r}")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeMismatchError(f"layer {l} has inconsistent weight/bias shapes")
            if l > 0 and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeMismatchError(f"layer {l} input width does not match layer {l - 1}")

    @property
    def widths(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_width(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def as_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {}
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{l}"] = w
            arrays[f"b{l}"] = b
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], activations: Sequence[str]) -> "NetworkParams":
        n_layers = len(activations) + 1
        return cls([arrays[f"W{l}"] for l in range(n_layers)],
                   [arrays[f"b{l}"] for l in range(n_layers)], activations)

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                             self.activations)


def init_network(widths: Sequence[int], activation: str, rng: np.random.Generator,
                 zero_output: bool = True) -> NetworkParams:
    """
    Fan-in scaled uniform initialization; the output layer starts at zero so the
    raw map is identically zero.
    """
    if len(widths) < 2:
        raise ValueError("a network needs an input and an output width")
    weights, biases = [], []
    n_layers = len(widths) - 1
    for l in range(n_layers):
        fan_in, fan_out = widths[l], widths[l + 1]
        if l == n_layers - 1 and zero_output:
            weights.append(np.zeros((fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
            continue
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return NetworkParams(weights, biases, [activation] * (n_layers - 1))


def _as_batch(params: NetworkParams, inputs: np.ndarray) -> Tuple[np.ndarray, bool]:
    inputs = np.asarray(inputs, dtype=np.float64)
    single = inputs.ndim == 1
    batch = inputs[None, :] if single else inputs
    if batch.ndim != 2 or batch.shape[1] != params.input_width:
        raise WidthMismatchError(
            f"network expects inputs of width {params.input_width}, got shape {inputs.shape}")
    return batch, single


def _forward_trace(params: NetworkParams, batch: np.ndarray) -> List[np.ndarray]:
    trace = [batch]
    a = batch
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        a = z if l == last else _activate(params.activations[l], z)
        trace.append(a)
    return trace


def forward(params: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    """Affine/activation composition; accepts one input vector or a (B, in) batch."""
    batch, single = _as_batch(params, inputs)
    out = _forward_trace(params, batch)[-1]
    return out[0] if single else out


class GradientBuffer:
    """Named gradient arrays congruent in shape to a parameter group."""

    def __init__(self, arrays: Dict[str, np.ndarray]):
        self.arrays = {name: np.asarray(value, dtype=np.float64) for name, value in arrays.items()}

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray]) -> "GradientBuffer":
        return cls({name: np.zeros_like(value, dtype=np.float64) for name, value in params.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def check_congruent(self, params: Dict[str, np.ndarray]) -> None:
        if set(params) != set(self.arrays):
            raise ShapeMismatchError(
                f"gradient names {sorted(self.arrays)} do not match parameters {sorted(params)}")
        for name, value in params.items():
            if np.shape(value) != self.arrays[name].shape:
                raise ShapeMismatchError(
                    f"gradient {name} has shape {self.arrays[name].shape}, parameter {np.shape(value)}")

    def add(self, other: "GradientBuffer") -> "GradientBuffer":
        self.check_congruent(other.arrays)
        return GradientBuffer({k: v + other.arrays[k] for k, v in self.arrays.items()})


def backward(params: NetworkParams, inputs: np.ndarray, cotangents: np.ndarray) -> GradientBuffer:
    """
    Exact gradients of sum_b <cotangent_b, output_b> with respect to every
    weight and bias. One forward and one backward sweep.
    """
    batch, single = _as_batch(params, inputs)
    cot = np.asarray(cotangents, dtype=np.float64)
    cot = cot[None, :] if single and cot.ndim == 1 else cot
    if cot.shape != (batch.shape[0], params.output_width):
        raise ShapeMismatchError(
            f"cotangents must have shape {(batch.shape[0], params.output_width)}, got {cot.shape}")

    trace = _forward_trace(params, batch)
    grads: Dict[str, np.ndarray] = {}
    delta = cot
    for l in range(len(params.weights) - 1, -1, -1):
        a_prev = trace[l]
        grads[f"W{l}"] = delta.T @ a_prev
        grads[f"b{l}"] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * _activation_slope(params.activations[l - 1], a_prev)
    return GradientBuffer(grads)


@dataclass
class AdamState:
    """Bias-corrected first/second moment accumulators of one parameter group."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(self.beta1, self.beta2, self.eps, self.step,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def sgd_like_step(params: Dict[str, np.ndarray], grads: GradientBuffer,
                  state: Optional[AdamState], lr: float,
                  direction: str = "descent") -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One adaptive-moment update. direction 'descent' subtracts the step,
    'ascent' adds it. Inputs are not modified.
    """
    if direction not in ("descent", "ascent"):
        raise ValueError(f"direction must be 'descent' or 'ascent', got {direction!r}")
    grads.check_congruent(params)
    state = AdamState() if state is None else state
    sign = -1.0 if direction == "descent" else 1.0

    step = state.step + 1
    new_m, new_v, new_params = {}, {}, {}
    for name, value in params.items():
        g = grads[name]
        m_prev = state.m.get(name, np.zeros_like(g))
        v_prev = state.v.get(name, np.zeros_like(g))
        if m_prev.shape != g.shape:
            raise ShapeMismatchError(f"optimizer state for {name} has the wrong shape")
        m = state.beta1 * m_prev + (1.0 - state.beta1) * g
        v = state.beta2 * v_prev + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** step)
        v_hat = v / (1.0 - state.beta2 ** step)
        new_params[name] = np.asarray(value, dtype=np.float64) + sign * lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    logging.getLogger('AdamOptimizer').debug(f"{direction} step {step} on {sorted(params)}")
    return new_params, AdamState(state.beta1, state.beta2, state.eps, step, new_m, new_v)
