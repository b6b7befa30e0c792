"""
Phase Core Module for the Wigner Pushforward Solver

This module holds the foundational domain types shared by every other module:
physical constants, phase-space points and batches, the run configuration,
the exception hierarchy and the counter-based random streams that make every
Monte Carlo draw reproducible.
"""

import logging
import math
import zlib
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict


class WignerError(Exception):
    """Base exception for all solver errors."""
    pass


class ConfigValidationError(WignerError):
    """Raised when a configuration value violates an invariant."""

    def __init__(self, kind: str, field: str, message: Optional[str] = None):
        self.kind = kind
        self.field = field
        super().__init__(message or f"{kind}({field!r})")


class DimensionMismatchError(WignerError):
    """Raised when vector lengths disagree with the phase-space dimension."""
    pass


class EmptyBatchError(WignerError):
    """Raised when a batch carries no samples."""
    pass


class PhysicalConstants(BaseModel):
    """Action unit, mass and number of degrees of freedom (natural units by default)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    hbar: float = 1.0
    mass: float = 1.0
    dim: int = 1


class RunConfig(BaseModel):
    """Sampling and optimization knobs of one training run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    horizon: float = 1.0
    batch_size: int = 256
    num_test: int = 64
    n_adv: int = 5
    lr_gen: float = 1e-3
    lr_adv: float = 1e-2
    seed: int = 0
    epochs: int = 1


def validate_config(cfg: RunConfig, consts: PhysicalConstants,
                    expected_dim: Optional[int] = None) -> None:
    """
    Check every invariant of a run configuration and its physical constants.

    Args:
        cfg: Run configuration
        consts: Physical constants
        expected_dim: Dimension demanded by another component (potential, initial data)

    Raises:
        ConfigValidationError: naming the first offending field
    """
    logger = logging.getLogger('ConfigValidator')

    def fail(kind: str, field: str) -> None:
        error_msg = f"Invalid configuration: {kind}({field!r})"
        logger.error(error_msg)
        raise ConfigValidationError(kind, field, error_msg)

    for name in ("hbar", "mass"):
        value = getattr(consts, name)
        if not math.isfinite(value) or value <= 0:
            fail("non-positive-constant", name)
    if consts.dim < 1:
        fail("non-positive-constant", "dim")

    if not math.isfinite(cfg.horizon) or cfg.horizon <= 0:
        fail("non-positive-constant", "horizon")
    for name in ("batch_size", "num_test", "epochs"):
        if getattr(cfg, name) < 1:
            fail("non-positive-constant", name)
    if cfg.n_adv < 0:
        fail("non-positive-constant", "n_adv")
    for name in ("lr_gen", "lr_adv"):
        value = getattr(cfg, name)
        if not math.isfinite(value) or value <= 0:
            fail("non-positive-constant", name)
    if not 0 <= cfg.seed < 2 ** 64:
        fail("out-of-range", "seed")

    if expected_dim is not None and expected_dim != consts.dim:
        fail("dimension-mismatch", "dim")


def _frozen_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, init=False)
class PhasePoint:
    """A single phase-space point (x, p); both vectors have the same length."""

    x: np.ndarray
    p: np.ndarray

    def __init__(self, x, p):
        x_arr = _frozen_vector(x, "x")
        p_arr = _frozen_vector(p, "p")
        if x_arr.shape != p_arr.shape or x_arr.size == 0:
            raise DimensionMismatchError(
                f"position has {x_arr.size} entries but momentum has {p_arr.size}")
        object.__setattr__(self, "x", x_arr)
        object.__setattr__(self, "p", p_arr)

    @property
    def dim(self) -> int:
        return self.x.size


@dataclass(frozen=True, init=False)
class PhaseBatch:
    """
    M phase-space samples with their time stamps.

    Stored column-wise: times (M,), x (M, N), p (M, N). Iterating yields
    (time, PhasePoint) pairs.
    """

    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    horizon: float

    def __init__(self, times, x, p, horizon: float):
        times_arr = np.array(times, dtype=np.float64).reshape(-1)
        x_arr = np.atleast_2d(np.array(x, dtype=np.float64))
        p_arr = np.atleast_2d(np.array(p, dtype=np.float64))
        if times_arr.size == 0:
            raise EmptyBatchError("a phase batch needs at least one sample")
        if x_arr.shape != p_arr.shape or x_arr.shape[0] != times_arr.size:
            raise DimensionMismatchError(
                f"batch shapes disagree: times {times_arr.shape}, x {x_arr.shape}, p {p_arr.shape}")
        if np.any(times_arr < 0) or np.any(times_arr > horizon):
            raise ValueError(f"batch times must lie in [0, {horizon}]")
        for arr in (times_arr, x_arr, p_arr):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times_arr)
        object.__setattr__(self, "x", x_arr)
        object.__setattr__(self, "p", p_arr)
        object.__setattr__(self, "horizon", float(horizon))

    def __len__(self) -> int:
        return self.times.size

    @property
    def dim(self) -> int:
        return self.x.shape[1]


STREAM_NAMES = (
    "init_plus",
    "init_minus",
    "noise_plus",
    "noise_minus",
    "times",
    "test_init",
    "heldout",
    "network",
)


def _key_word(part: Union[int, str]) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream key parts must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


class RandomStreams:
    """
    Counter-based, splittable random streams.

    Every generator is a fresh Philox instance keyed by (seed, key prefix,
    stream name), so a draw depends only on its key and never on the order
    in which other draws happened.
    """

    def __init__(self, seed: int, prefix: Tuple[Union[int, str], ...] = ()):
        self.seed = int(seed)
        self.prefix = tuple(prefix)

    def substream(self, *key: Union[int, str]) -> "RandomStreams":
        return RandomStreams(self.seed, self.prefix + tuple(key))

    def spawn_key(self, name: str) -> Tuple[int, ...]:
        if name not in STREAM_NAMES:
            raise KeyError(f"unknown random stream {name!r}")
        return tuple(_key_word(k) for k in self.prefix) + (STREAM_NAMES.index(name),)

    def generator(self, name: str) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key(name))
        return np.random.Generator(np.random.Philox(seq))
