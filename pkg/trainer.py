"""
Trainer Module for the Wigner Pushforward Solver

The min-max loop: n_adv ascent steps on the test functions, one descent step
on the generator, per-epoch metrics, held-out adversary evaluation, the
divergence guard and checkpointing.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from autodiff_net import AdamState, NetworkParams, sgd_like_step
from phase_core import PhysicalConstants, RandomStreams, RunConfig, WignerError
from potentials import PotentialOracle
from pushforward import (AnalyticFlowGenerator, InitialDecomposition, SignedPushforward, sample_batch,
                         signed_expectation, wigner_negativity_weight)
from residual import NonFiniteResidualError, ResidualAssembler, ResidualEstimate, ResidualSettings
from run_store import CheckpointFormatError, RunStore
from testfuncs import TestFunctionSet, init_test_set


class DivergenceError(WignerError):
    """Raised when the loss leaves the finite range the guard allows."""

    def __init__(self, epoch: int, loss: float, message: Optional[str] = None):
        self.epoch = epoch
        self.loss = loss
        super().__init__(message or f"training diverged at epoch {epoch} (loss={loss})")


class OptimizerSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class TestSetSettings(BaseModel):
    """Sampling and clipping boxes of the adversary's frequencies."""

    __test__ = False
    model_config = ConfigDict(frozen=True, extra="forbid")

    scale_x: float = 4.0
    scale_p: float = 4.0
    scale_kappa: float = 4.0


class TrainingSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    checkpoint_every: int = 100
    eval_every: int = 50
    divergence_threshold: float = 1e6
    heldout_factor: int = 4
    frozen_oracle: Optional[str] = None
    eval_times: Tuple[float, ...] = ()


GROUPS = ("plus", "minus", "alpha", "adversary")


@dataclass
class TrainState:
    """
    Everything needed to continue training bit-for-bit: generator, adversary,
    optimizer moments, epoch and the draw counter that keys every random batch.
    """

    sp: Any
    tfs: TestFunctionSet
    optimizers: Dict[str, AdamState]
    epoch: int = 0
    draw_counter: int = 0
    seed: int = 0
    history: List[Dict[str, Any]] = field(default_factory=list)

    def copy(self) -> "TrainState":
        sp = self.sp.copy() if hasattr(self.sp, "copy") else self.sp
        return TrainState(sp, self.tfs.copy(), {k: v.copy() for k, v in self.optimizers.items()},
                          self.epoch, self.draw_counter, self.seed, [dict(row) for row in self.history])

    def to_container(self) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
        arrays: Dict[str, np.ndarray] = {}
        meta: Dict[str, Any] = {
            "kind": "train_state",
            "epoch": self.epoch,
            "draw_counter": self.draw_counter,
            "seed": self.seed,
            "history": self.history,
            "optimizers": {},
        }
        if isinstance(self.sp, SignedPushforward):
            for branch in ("plus", "minus"):
                for name, value in self.sp.network(branch).as_arrays().items():
                    arrays[f"{branch}/{name}"] = value
            arrays["alpha_raw"] = np.array([self.sp.alpha_raw])
            meta["generator"] = {
                "kind": "network",
                "dim": self.sp.dim,
                "d_base": self.sp.d_base,
                "freeze_alpha": self.sp.freeze_alpha,
                "widths": self.sp.params_plus.widths,
                "activations": {"plus": self.sp.params_plus.activations,
                                "minus": self.sp.params_minus.activations},
            }
        else:
            meta["generator"] = {"kind": "analytic", "name": self.sp.name, "dim": self.sp.dim,
                                 "params": self.sp.params, "alpha": self.sp.alpha}
        for name, value in self.tfs.as_arrays().items():
            arrays[f"tfs/{name}"] = value
        for group, state in self.optimizers.items():
            meta["optimizers"][group] = {"step": state.step, "beta1": state.beta1,
                                         "beta2": state.beta2, "eps": state.eps}
            for name in state.m:
                arrays[f"opt/{group}/m/{name}"] = state.m[name]
                arrays[f"opt/{group}/v/{name}"] = state.v[name]
        return arrays, meta

    @classmethod
    def from_container(cls, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> "TrainState":
        if meta.get("kind") != "train_state":
            raise CheckpointFormatError("container does not hold a training state")
        gen = meta["generator"]
        if gen["kind"] == "network":
            nets = {}
            for branch in ("plus", "minus"):
                prefix = f"{branch}/"
                nets[branch] = NetworkParams.from_arrays(
                    {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)},
                    gen["activations"][branch])
            sp = SignedPushforward(nets["plus"], nets["minus"], float(arrays["alpha_raw"][0]),
                                   gen["dim"], gen["d_base"], gen["freeze_alpha"])
        else:
            sp = AnalyticFlowGenerator(gen["name"], gen["dim"], gen["params"], gen["alpha"])
        tfs = TestFunctionSet.from_arrays({k[4:]: v for k, v in arrays.items() if k.startswith("tfs/")})
        optimizers = {}
        for group, info in meta["optimizers"].items():
            m_prefix, v_prefix = f"opt/{group}/m/", f"opt/{group}/v/"
            optimizers[group] = AdamState(
                info["beta1"], info["beta2"], info["eps"], info["step"],
                {k[len(m_prefix):]: v for k, v in arrays.items() if k.startswith(m_prefix)},
                {k[len(v_prefix):]: v for k, v in arrays.items() if k.startswith(v_prefix)})
        return cls(sp, tfs, optimizers, meta["epoch"], meta["draw_counter"], meta["seed"],
                   list(meta.get("history", [])))


class WignerTrainer:
    """
    Runs the adversarial loop for one potential and one initial decomposition.

    Every batch is keyed by (seed, "draw", draw_counter), so a state restored
    from a checkpoint continues with exactly the draws it would have seen.
    """

    def __init__(self, V: PotentialOracle, decomp: InitialDecomposition, consts: PhysicalConstants,
                 cfg: RunConfig, residual_settings: Optional[ResidualSettings] = None,
                 training: Optional[TrainingSettings] = None,
                 optimizer: Optional[OptimizerSettings] = None,
                 test_set: Optional[TestSetSettings] = None,
                 store: Optional[RunStore] = None, threads: int = 1,
                 reference_flow: Optional[Callable] = None, flow_params: Optional[Dict[str, float]] = None,
                 record_wallclock: bool = False, checkpoint_metadata: Optional[Dict[str, Any]] = None):
        self.V = V
        self.decomp = decomp
        self.consts = consts
        self.cfg = cfg
        self.training = training or TrainingSettings()
        self.optimizer = optimizer or OptimizerSettings()
        self.test_set = test_set or TestSetSettings()
        self.store = store
        self.reference_flow = reference_flow
        self.flow_params = {"mass": consts.mass, **(flow_params or {})}
        self.record_wallclock = record_wallclock
        self.checkpoint_metadata = dict(checkpoint_metadata or {})
        self.assembler = ResidualAssembler(V, consts, cfg, residual_settings, threads)
        self.streams = RandomStreams(cfg.seed)
        self.current_state: Optional[TrainState] = None
        self.logger = logging.getLogger('WignerTrainer')

    # --- construction ---

    def _fresh_optimizer(self) -> AdamState:
        return AdamState(self.optimizer.beta1, self.optimizer.beta2, self.optimizer.eps)

    def initial_state(self, hidden=(64, 64, 64), activation: str = "tanh",
                      d_base: Optional[int] = None, freeze_alpha: bool = False) -> TrainState:
        dim = self.consts.dim
        if self.training.frozen_oracle:
            sp = AnalyticFlowGenerator(self.training.frozen_oracle, dim, self.flow_params,
                                       alpha=self.decomp.alpha0)
        else:
            sp = SignedPushforward.create(dim, self.streams.substream("network").generator("network"),
                                          hidden, activation, d_base, self.decomp.alpha0, freeze_alpha)
        tfs = init_test_set(self.cfg.num_test, dim, self.test_set.scale_x, self.test_set.scale_p,
                            self.test_set.scale_kappa, self.streams.substream("adversary").generator("test_init"))
        optimizers = {group: self._fresh_optimizer() for group in GROUPS}
        return TrainState(sp, tfs, optimizers, seed=self.cfg.seed)

    def _draw(self, state: TrainState) -> RandomStreams:
        streams = self.streams.substream("draw", state.draw_counter)
        state.draw_counter += 1
        return streams

    # --- phases ---

    def adversary_phase(self, state: TrainState, n_adv: Optional[int] = None) -> TrainState:
        """n_adv ascent steps on the test functions, clipped back into their boxes."""
        n_adv = self.cfg.n_adv if n_adv is None else n_adv
        if n_adv < 0:
            raise ValueError("n_adv must be non-negative")
        state = state.copy()
        box = self.test_set
        for _ in range(n_adv):
            estimate, grads = self.assembler.loss_and_gradients(
                state.sp, self.decomp, state.tfs, self._draw(state), generator_grads=False)
            self._guard(state, estimate)
            arrays, state.optimizers["adversary"] = sgd_like_step(
                state.tfs.as_arrays(), grads["adversary"], state.optimizers["adversary"],
                self.cfg.lr_adv, "ascent")
            state.tfs = TestFunctionSet.from_arrays(arrays).clip(box.scale_x, box.scale_p, box.scale_kappa)
        return state

    def generator_phase(self, state: TrainState, lr: Optional[float] = None) -> Tuple[TrainState, ResidualEstimate]:
        """One descent step on both networks and, unless frozen, the mixing weight."""
        lr = self.cfg.lr_gen if lr is None else lr
        state = state.copy()
        estimate, grads = self.assembler.loss_and_gradients(
            state.sp, self.decomp, state.tfs, self._draw(state), adversary_grads=False)
        self._guard(state, estimate)
        if not getattr(state.sp, "trainable", False):
            return state, estimate

        groups = state.sp.parameter_groups()
        updated = {}
        active = ["plus"]
        if state.sp.uses_minus_branch:
            active.append("minus")
        if not state.sp.freeze_alpha:
            active.append("alpha")
        for group in active:
            updated[group], state.optimizers[group] = sgd_like_step(
                groups[group], grads[group], state.optimizers[group], lr, "descent")
        state.sp = state.sp.with_groups(updated)
        return state, estimate

    def _guard(self, state: TrainState, estimate: ResidualEstimate) -> None:
        if not np.isfinite(estimate.loss) or estimate.loss > self.training.divergence_threshold:
            error_msg = f"Loss {estimate.loss} left the allowed range at epoch {state.epoch}"
            self.logger.error(error_msg)
            raise DivergenceError(state.epoch, estimate.loss, error_msg)

    # --- evaluation ---

    def heldout_loss(self, state: TrainState) -> ResidualEstimate:
        """Residual against a fresh, never-trained adversary of size heldout_factor * K."""
        streams = self.streams.substream("heldout", state.epoch)
        box = self.test_set
        tfs = init_test_set(self.training.heldout_factor * self.cfg.num_test, self.consts.dim,
                            box.scale_x, box.scale_p, box.scale_kappa, streams.generator("heldout"))
        return self.assembler.estimate(state.sp, self.decomp, tfs, streams)

    def signed_means(self, state: TrainState, t: float, streams: Optional[RandomStreams] = None):
        """Signed Monte Carlo means of x and p at time t."""
        streams = streams or self.streams.substream("moments", state.epoch)
        sample = sample_batch(state.sp, self.decomp, np.full(self.cfg.batch_size, t), streams)
        plus = sample.plus.batch(max(t, self.cfg.horizon))
        minus = sample.minus.batch(max(t, self.cfg.horizon)) if sample.minus is not None else None
        mean_x = signed_expectation(plus, minus, sample.alpha_plus, sample.alpha_minus, lambda _t, x, _p: x)
        mean_p = signed_expectation(plus, minus, sample.alpha_plus, sample.alpha_minus, lambda _t, _x, p: p)
        return np.atleast_1d(mean_x), np.atleast_1d(mean_p)

    def moment_error(self, state: TrainState, t: float) -> Optional[float]:
        """Largest deviation of the signed means from the reference trajectory of the centre."""
        if self.reference_flow is None:
            return None
        cx, cp = self.decomp.mean()
        ref_x, ref_p = self.reference_flow(np.array([t]), cx[None, :], cp[None, :])
        mean_x, mean_p = self.signed_means(state, t)
        return float(max(np.max(np.abs(mean_x - ref_x[0])), np.max(np.abs(mean_p - ref_p[0]))))

    # --- loop ---

    def _metrics_row(self, state: TrainState, estimate: ResidualEstimate, heldout: Optional[float],
                     moment_err: Optional[float], started: float) -> Dict[str, Any]:
        mean_x, mean_p = self.signed_means(state, self.cfg.horizon)
        row: Dict[str, Any] = {"epoch": state.epoch, "loss": estimate.loss,
                               "noise_floor": estimate.noise_floor,
                               "heldout_loss": heldout if heldout is not None else np.nan,
                               "alpha": wigner_negativity_weight(state.sp)}
        for i in range(self.consts.dim):
            row[f"mean_x{i}"] = float(mean_x[i])
        for i in range(self.consts.dim):
            row[f"mean_p{i}"] = float(mean_p[i])
        row["moment_error"] = moment_err if moment_err is not None else np.nan
        if self.record_wallclock:
            row["wallclock_s"] = time.perf_counter() - started
        return row

    def save(self, state: TrainState, name: str) -> Optional[str]:
        if self.store is None:
            return None
        arrays, meta = state.to_container()
        meta.update(self.checkpoint_metadata)
        return self.store.save_checkpoint(name, arrays, meta)

    def train(self, state: Optional[TrainState] = None, epochs: Optional[int] = None,
              **init_kwargs) -> TrainState:
        """
        Run epochs of (adversary_phase; generator_phase) starting from state.

        Raises:
            DivergenceError: after writing the last good state as checkpoint 'last_good'
        """
        state = state or self.initial_state(**init_kwargs)
        epochs = self.cfg.epochs if epochs is None else epochs
        started = time.perf_counter()
        last_good = state
        self.current_state = state
        self.logger.info(f"Training for {epochs} epochs from epoch {state.epoch}")
        for _ in range(epochs):
            try:
                state = self.adversary_phase(state)
                state, estimate = self.generator_phase(state)
            except (DivergenceError, NonFiniteResidualError) as e:
                self.save(last_good, "last_good")
                if isinstance(e, DivergenceError):
                    raise
                raise DivergenceError(last_good.epoch, float("nan"), str(e)) from e
            state.epoch += 1

            heldout, moment_err = None, None
            if self.training.eval_every > 0 and state.epoch % self.training.eval_every == 0:
                heldout = self.heldout_loss(state).loss
                moment_err = self.moment_error(state, self.cfg.horizon)
            row = self._metrics_row(state, estimate, heldout, moment_err, started)
            state.history.append(row)
            if self.store is not None:
                self.store.append_metrics(row)
            self.logger.info(f"epoch {state.epoch}: loss={estimate.loss:.4e} "
                             f"floor={estimate.noise_floor:.2e} alpha={row['alpha']:.4f}")
            if self.training.checkpoint_every > 0 and state.epoch % self.training.checkpoint_every == 0:
                self.save(state, f"epoch-{state.epoch:06d}")
            last_good = state
            self.current_state = state
        return state
