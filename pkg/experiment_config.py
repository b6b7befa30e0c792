"""
Experiment Configuration Module for the Wigner Pushforward Solver

This module provides the ExperimentConfig model that gathers every knob of a
run, loads and writes it as TOML, resolves shipped presets and validates the
whole configuration before any computation starts.
"""

import logging
import math
import os
from typing import Any, Dict, Literal, Optional, Tuple

import toml
from pydantic import BaseModel, ConfigDict, ValidationError

from phase_core import ConfigValidationError, PhysicalConstants, RunConfig, validate_config
from potentials import POTENTIAL_LIBRARY, UnknownNameError, build_potential
from residual import ResidualSettings
from trainer import OptimizerSettings, TestSetSettings, TrainingSettings


PRESET_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "presets")
INITIAL_STATES = ("coherent", "excited")
ANALYTIC_FLOWS = ("free", "harmonic")


class PotentialSelection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    params: Dict[str, float] = {}


class InitialSelection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "coherent"
    params: Dict[str, float] = {}
    freeze_alpha: bool = False


class NetworkSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    hidden: Tuple[int, ...] = (64, 64, 64)
    activation: Literal["tanh", "identity"] = "tanh"
    d_base: Optional[int] = None


class OracleSettings(BaseModel):
    """Grid sizes and sweep extents of the grid oracle workflows."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_grid: int = 256
    half_width: float = 8.0
    sweep_hbars: Tuple[float, ...] = (0.25, 1.0, 4.0)
    sweep_tests: int = 20
    sweep_scale: float = 2.0
    evolve_potential: str = "harmonic"
    evolve_periods: float = 1.0
    evolve_steps: int = 50000


class OutputSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    out_dir: str = "runs/default"
    record_wallclock: bool = False


class ExperimentConfig(BaseModel):
    """Everything one run needs; unknown keys anywhere are rejected."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    physics: PhysicalConstants = PhysicalConstants()
    run: RunConfig = RunConfig()
    potential: PotentialSelection
    initial: InitialSelection = InitialSelection()
    network: NetworkSettings = NetworkSettings()
    optimizer: OptimizerSettings = OptimizerSettings()
    test_set: TestSetSettings = TestSetSettings()
    residual: ResidualSettings = ResidualSettings()
    training: TrainingSettings = TrainingSettings()
    oracle: OracleSettings = OracleSettings()
    output: OutputSettings = OutputSettings()


logger = logging.getLogger('ExperimentConfig')


def _fail(kind: str, field: str, detail: str = "") -> None:
    error_msg = f"Invalid configuration: {kind}({field!r})" + (f": {detail}" if detail else "")
    logger.error(error_msg)
    raise ConfigValidationError(kind, field, error_msg)


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """Build the model, translating pydantic errors into ConfigValidationError."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        if first["type"] == "extra_forbidden":
            _fail("unknown-key", field)
        if first["type"] == "missing":
            _fail("missing-key", field)
        _fail("out-of-range", field, first["msg"])


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = toml.load(handle)
    except FileNotFoundError:
        _fail("missing-file", path)
    except toml.TomlDecodeError as e:
        _fail("parse-error", path, str(e))
    logger.info(f"Successfully loaded configuration from {path}")
    return config_from_dict(data)


def dumps_config(cfg: ExperimentConfig) -> str:
    return toml.dumps(cfg.model_dump(mode="json", exclude_none=True))


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(dumps_config(cfg))


def preset_path(name: str) -> str:
    return os.path.join(PRESET_DIR, f"{name}.toml")


def available_presets() -> Tuple[str, ...]:
    if not os.path.isdir(PRESET_DIR):
        return ()
    return tuple(sorted(f[:-5] for f in os.listdir(PRESET_DIR) if f.endswith(".toml")))


def load_preset(name: str) -> ExperimentConfig:
    path = preset_path(name)
    if not os.path.exists(path):
        _fail("unknown-name", "preset", f"{name!r} not in {list(available_presets())}")
    return load_config(path)


def apply_overrides(cfg: ExperimentConfig, seed: Optional[int] = None,
                    out_dir: Optional[str] = None) -> ExperimentConfig:
    """Command-line overrides: --seed replaces run.seed, --out replaces output.out_dir."""
    if seed is not None:
        cfg = cfg.model_copy(update={"run": cfg.run.model_copy(update={"seed": int(seed)})})
    if out_dir is not None:
        cfg = cfg.model_copy(update={"output": cfg.output.model_copy(update={"out_dir": out_dir})})
    return cfg


def validate_experiment(cfg: ExperimentConfig) -> None:
    """
    Check every range constraint of an experiment before anything runs.

    Raises:
        ConfigValidationError: naming the first offending field
    """
    validate_config(cfg.run, cfg.physics)

    if cfg.potential.name not in POTENTIAL_LIBRARY:
        _fail("unknown-name", "potential.name", cfg.potential.name)
    try:
        build_potential(cfg.potential.name, cfg.physics.dim, cfg.potential.params)
    except UnknownNameError as e:
        _fail("unknown-key", "potential.params", str(e))
    if cfg.initial.name not in INITIAL_STATES:
        _fail("unknown-name", "initial.name", cfg.initial.name)

    if any(width < 1 for width in cfg.network.hidden):
        _fail("non-positive-constant", "network.hidden")
    if cfg.network.d_base is not None and cfg.network.d_base < 1:
        _fail("non-positive-constant", "network.d_base")

    for name in ("beta1", "beta2"):
        if not 0.0 <= getattr(cfg.optimizer, name) < 1.0:
            _fail("out-of-range", f"optimizer.{name}")
    if cfg.optimizer.eps <= 0:
        _fail("non-positive-constant", "optimizer.eps")

    for name in ("scale_x", "scale_p", "scale_kappa"):
        value = getattr(cfg.test_set, name)
        if not math.isfinite(value) or value < 0:
            _fail("out-of-range", f"test_set.{name}")

    for tau in cfg.residual.extra_horizons:
        if not 0.0 < tau <= cfg.run.horizon:
            _fail("out-of-range", "residual.extra_horizons")
    if cfg.residual.fd_step <= 0:
        _fail("non-positive-constant", "residual.fd_step")
    if cfg.residual.block_size < 1:
        _fail("non-positive-constant", "residual.block_size")
    if cfg.residual.variance_corrected and cfg.run.batch_size < 2:
        _fail("out-of-range", "run.batch_size")

    if cfg.training.frozen_oracle is not None and cfg.training.frozen_oracle not in ANALYTIC_FLOWS:
        _fail("unknown-name", "training.frozen_oracle", cfg.training.frozen_oracle)
    if cfg.training.divergence_threshold <= 0:
        _fail("non-positive-constant", "training.divergence_threshold")
    if cfg.training.heldout_factor < 1:
        _fail("non-positive-constant", "training.heldout_factor")
    for t in cfg.training.eval_times:
        if not 0.0 <= t <= cfg.run.horizon:
            _fail("out-of-range", "training.eval_times")

    n = cfg.oracle.n_grid
    if n < 8 or n & (n - 1):
        _fail("out-of-range", "oracle.n_grid")
    if cfg.oracle.half_width <= 0:
        _fail("non-positive-constant", "oracle.half_width")
    if any(h <= 0 for h in cfg.oracle.sweep_hbars):
        _fail("non-positive-constant", "oracle.sweep_hbars")
    if cfg.oracle.sweep_tests < 1 or cfg.oracle.evolve_steps < 1:
        _fail("non-positive-constant", "oracle.sweep_tests")
    logger.info("Configuration validated")
