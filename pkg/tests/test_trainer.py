"""
Unit tests for the trainer module.

These tests validate the adversarial loop on tiny instances: metrics
bookkeeping, bit-exact resumption from a checkpoint, the divergence guard,
training against a frozen exact flow and the contracts of the two phases.
"""

import unittest
import os
import sys
import shutil
import tempfile

import numpy as np

# Import from parent directory
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from autodiff_net import GradientBuffer, sgd_like_step
from oracle import analytic_flow
from phase_core import PhysicalConstants, RunConfig
from potentials import build_potential
from pushforward import (ALPHA_FLOOR, AnalyticFlowGenerator, CoherentStateDecomposition,
                         ExcitedStateDecomposition)
from run_store import RunStore, decode_container, encode_container
from trainer import DivergenceError, TestSetSettings, TrainState, TrainingSettings, WignerTrainer


CONSTS = PhysicalConstants(hbar=1.0, mass=1.0, dim=1)
CFG = RunConfig(horizon=0.5, batch_size=32, num_test=3, n_adv=2, epochs=3, seed=11)


class TestWignerTrainer(unittest.TestCase):
    """Test suite for WignerTrainer."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.store = RunStore(self.test_dir)

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def _trainer(self, store=None, training=None, potential="anharmonic"):
        training = training or TrainingSettings(eval_every=2, checkpoint_every=0)
        return WignerTrainer(build_potential(potential, 1), CoherentStateDecomposition(1, CONSTS),
                             CONSTS, CFG, training=training, store=store)

    def test_initial_state_is_identity_map(self):
        state = self._trainer().initial_state(hidden=(8,))
        self.assertEqual(state.epoch, 0)
        self.assertEqual(len(state.tfs), 3)
        self.assertAlmostEqual(state.sp.alpha, ALPHA_FLOOR, delta=1e-12)
        for w in (state.sp.params_plus.weights[-1], state.sp.params_minus.weights[-1]):
            self.assertFalse(np.any(w))

    def test_train_writes_metrics(self):
        trainer = self._trainer(store=self.store)
        state = trainer.train(hidden=(8,))
        self.assertEqual(state.epoch, 3)
        self.assertEqual(len(state.history), 3)
        metrics = self.store.read_table("metrics.csv")
        self.assertEqual(list(metrics["epoch"]), [1, 2, 3])
        for column in ("loss", "noise_floor", "heldout_loss", "alpha", "mean_x0", "mean_p0"):
            self.assertIn(column, metrics.columns)
        self.assertTrue(np.isfinite(metrics["heldout_loss"].iloc[1]))
        self.assertTrue(np.isnan(metrics["heldout_loss"].iloc[0]))

    def test_generator_moves_away_from_identity(self):
        state = self._trainer().train(hidden=(8,), epochs=1)
        self.assertTrue(np.any(state.sp.params_plus.weights[-1]))

    def test_resume_is_bit_exact(self):
        straight = self._trainer().train(hidden=(8,), epochs=3)

        trainer = self._trainer()
        partial = trainer.train(hidden=(8,), epochs=2)
        arrays, meta = decode_container(encode_container(*partial.to_container()))
        resumed = trainer.train(state=TrainState.from_container(arrays, meta), epochs=1)

        self.assertEqual(resumed.epoch, 3)
        self.assertEqual(resumed.draw_counter, straight.draw_counter)
        self.assertEqual(resumed.sp.alpha_raw, straight.sp.alpha_raw)
        for a, b in zip(resumed.sp.params_plus.weights, straight.sp.params_plus.weights):
            np.testing.assert_array_equal(a, b)
        for name, value in straight.tfs.as_arrays().items():
            np.testing.assert_array_equal(resumed.tfs.as_arrays()[name], value)

    def test_divergence_saves_last_good(self):
        trainer = self._trainer(store=self.store,
                                training=TrainingSettings(divergence_threshold=1e-30, checkpoint_every=0))
        with self.assertRaises(DivergenceError) as ctx:
            trainer.train(hidden=(8,))
        self.assertEqual(ctx.exception.epoch, 0)
        self.assertTrue(os.path.exists(os.path.join(self.store.checkpoint_dir, "last_good.wgnr")))

    def test_checkpoint_cadence(self):
        trainer = self._trainer(store=self.store, training=TrainingSettings(checkpoint_every=2, eval_every=0))
        state = trainer.train(hidden=(8,))
        trainer.save(state, "final")
        names = sorted(os.listdir(self.store.checkpoint_dir))
        self.assertEqual(names, ["epoch-000002.wgnr", "final.wgnr"])

    def test_frozen_oracle(self):
        trainer = WignerTrainer(build_potential("harmonic", 1), CoherentStateDecomposition(1, CONSTS),
                                CONSTS, CFG, training=TrainingSettings(frozen_oracle="harmonic", eval_every=1),
                                reference_flow=analytic_flow("harmonic"))
        state = trainer.train(epochs=1)
        self.assertIsInstance(state.sp, AnalyticFlowGenerator)
        self.assertEqual(state.history[0]["alpha"], 0.0)
        self.assertIsInstance(trainer.moment_error(state, 0.5), float)

        arrays, meta = state.to_container()
        restored = TrainState.from_container(arrays, meta)
        self.assertEqual(restored.sp.name, "harmonic")

class TestTrainerPhases(unittest.TestCase):
    """Test suite for the adversary and generator phases under common random numbers."""

    def setUp(self):
        self.decomp = CoherentStateDecomposition(1, CONSTS, x0=1.0, p0=0.5)

    def _trainer(self, potential="harmonic", cfg=CFG, test_set=None, decomp=None):
        return WignerTrainer(build_potential(potential, 1), decomp or self.decomp, CONSTS, cfg,
                             training=TrainingSettings(eval_every=0, checkpoint_every=0), test_set=test_set)

    def test_adversary_ascent_raises_loss(self):
        raised = 0
        for seed in range(10):
            trainer = self._trainer(cfg=RunConfig(horizon=0.5, batch_size=256, num_test=4, seed=seed))
            state = trainer.initial_state(hidden=(8,), freeze_alpha=True)
            batch = trainer.streams.substream("draw", state.draw_counter)
            before = trainer.assembler.estimate(state.sp, self.decomp, state.tfs, batch).loss
            ascended = trainer.adversary_phase(state, n_adv=1)
            after = trainer.assembler.estimate(ascended.sp, self.decomp, ascended.tfs, batch).loss
            raised += int(after > before)
        self.assertGreaterEqual(raised, 8)

    def test_no_adversary_steps(self):
        trainer = self._trainer()
        state = trainer.initial_state(hidden=(8,))
        after = trainer.adversary_phase(state, n_adv=0)
        for name, value in state.tfs.as_arrays().items():
            np.testing.assert_array_equal(after.tfs.as_arrays()[name], value)
        self.assertEqual(after.optimizers["adversary"].step, 0)
        with self.assertRaises(ValueError):
            trainer.adversary_phase(state, n_adv=-1)

    def test_zero_learning_rate_keeps_generator(self):
        trainer = self._trainer()
        state = trainer.train(hidden=(8,), epochs=1)
        after, _ = trainer.generator_phase(state, lr=0.0)
        before_groups, after_groups = state.sp.parameter_groups(), after.sp.parameter_groups()
        for group in ("plus", "minus", "alpha"):
            for name, value in before_groups[group].items():
                np.testing.assert_array_equal(after_groups[group][name], value)

    def test_frozen_alpha_untouched(self):
        trainer = self._trainer(decomp=ExcitedStateDecomposition(1, CONSTS))
        state = trainer.initial_state(hidden=(8,), freeze_alpha=True)
        self.assertGreater(state.sp.alpha, 0.0)
        after, _ = trainer.generator_phase(state)
        self.assertEqual(after.sp.alpha_raw, state.sp.alpha_raw)
        self.assertEqual(after.optimizers["alpha"].step, 0)
        self.assertTrue(np.any(after.sp.params_plus.weights[-1]))

    def test_learnable_alpha_leaves_zero(self):
        trainer = self._trainer()
        state = trainer.initial_state(hidden=(8,))
        self.assertTrue(np.isfinite(state.sp.alpha_raw))
        after, _ = trainer.generator_phase(state)
        self.assertNotEqual(after.sp.alpha_raw, state.sp.alpha_raw)
        self.assertEqual(after.optimizers["alpha"].step, 1)

    def test_bias_only_generator_descends_monotonically(self):
        cfg = RunConfig(horizon=0.5, batch_size=256, num_test=4, seed=5)
        trainer = self._trainer("free", cfg, TestSetSettings(scale_x=2.0, scale_p=2.0, scale_kappa=2.0))
        state = trainer.initial_state(hidden=(), freeze_alpha=True)
        batch = trainer.streams.substream("fixed")
        sp, adam = state.sp, None
        losses = []
        for _ in range(21):
            estimate, grads = trainer.assembler.loss_and_gradients(sp, self.decomp, state.tfs, batch,
                                                                   adversary_grads=False)
            losses.append(estimate.loss)
            plus = sp.parameter_groups()["plus"]
            bias, adam = sgd_like_step({"b0": plus["b0"]}, GradientBuffer({"b0": grads["plus"]["b0"]}),
                                       adam, 5e-4, "descent")
            sp = sp.with_groups({"plus": {**plus, **bias}})
        self.assertFalse(np.any(sp.params_plus.weights[0]))
        self.assertTrue(np.all(np.diff(losses) < 0.0), losses)

    def test_heldout_loss_tracks_trained_adversary(self):
        cfg = RunConfig(horizon=0.5, batch_size=256, num_test=8, n_adv=2, epochs=4, seed=3)
        trainer = self._trainer("anharmonic", cfg, TestSetSettings(scale_x=2.0, scale_p=2.0, scale_kappa=2.0))
        state = trainer.train(hidden=(8,))
        heldout = trainer.heldout_loss(state)
        trained = trainer.assembler.estimate(state.sp, self.decomp, state.tfs,
                                             trainer.streams.substream("trained"))
        self.assertEqual(heldout.per_test.size, 32)
        self.assertLessEqual(heldout.loss, 10.0 * trained.loss)



if __name__ == "__main__":
    unittest.main()
