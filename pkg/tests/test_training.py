"""Tests for the optimizer, the learning-rate schedule and the training loop."""
import json
import math
import os
import shutil
import tempfile
import unittest

import numpy as np

from src.data.synthetic import PairSettings, make_pair
from src.exceptions import ConfigurationError, IncompatibleCheckpointError, NumericError
from src.models.config import ModelConfig
from src.models.paraformer import build
from src.tensor import Tensor
from src.training.optimizer import AdamW, lr_schedule
from src.training.trainer import Trainer, TrainSettings, last_checkpoint_path


def toy_samples(count=3, seed=0):
    rng = np.random.default_rng(seed)
    settings = PairSettings(n_keypoints=8, descriptor_dim=8, noise=0.05, distractor_ratio=0.25)
    return [make_pair(rng, 8, settings=settings) for _ in range(count)]


def toy_model(seed=0):
    cfg = ModelConfig.defaults('paraformer', 8, heads=2, num_layers=1, sinkhorn_iterations=10)
    return build(cfg, seed)


class TestSchedule(unittest.TestCase):
    def test_warmup_then_cosine(self):
        self.assertAlmostEqual(lr_schedule(0, 10, 2, 1.0), 0.5)
        self.assertAlmostEqual(lr_schedule(1, 10, 2, 1.0), 1.0)
        self.assertAlmostEqual(lr_schedule(2, 10, 2, 1.0), 1.0)
        self.assertAlmostEqual(lr_schedule(6, 10, 2, 1.0), 0.5)
        self.assertAlmostEqual(lr_schedule(10, 10, 2, 1.0, min_lr=0.1), 0.1)

    def test_never_increases_after_warmup(self):
        rates = [lr_schedule(s, 50, 5, 1e-3) for s in range(5, 50)]
        self.assertEqual(rates, sorted(rates, reverse=True))

    def test_no_total_means_constant(self):
        self.assertEqual(lr_schedule(7, 0, 0, 0.3), 0.3)


class TestAdamW(unittest.TestCase):
    def param(self, values, grad):
        p = Tensor(np.array(values, dtype=np.float32), requires_grad=True)
        p.grad = np.array(grad, dtype=np.float32)
        return p

    def test_first_step_moves_by_lr_against_gradient(self):
        w = self.param([[1.0, -1.0]], [[0.5, -2.0]])
        AdamW([('w.weight', w)], lr=0.1, weight_decay=0.0).step()
        np.testing.assert_allclose(w.data, [[0.9, -0.9]], atol=1e-6)

    def test_decay_skips_biases(self):
        w = self.param([[1.0]], [[0.0]])
        b = self.param([[1.0]], [[0.0]])
        AdamW([('l.weight', w), ('l.bias', b)], lr=0.1, weight_decay=0.5).step()
        np.testing.assert_allclose(w.data, [[0.95]], atol=1e-6)
        np.testing.assert_allclose(b.data, [[1.0]])

    def test_clipping_reports_raw_norm(self):
        w = self.param([[0.0, 0.0]], [[3.0, 4.0]])
        optimizer = AdamW([('w', w)], lr=0.1, weight_decay=0.0, grad_clip=1.0)
        self.assertAlmostEqual(optimizer.step(), 5.0, places=5)
        np.testing.assert_allclose(optimizer.m['w'], [[0.06, 0.08]], atol=1e-6)

    def test_non_finite_gradient(self):
        w = self.param([[0.0]], [[np.nan]])
        with self.assertRaises(NumericError):
            AdamW([('w', w)]).step()

    def test_state_round_trip(self):
        w = self.param([[1.0, 2.0]], [[0.1, 0.2]])
        first = AdamW([('w', w)])
        first.step()
        second = AdamW([('w', w)])
        second.load_state(first.state(), first.t)
        np.testing.assert_array_equal(second.m['w'], first.m['w'])
        self.assertEqual(second.t, 1)
        with self.assertRaises(IncompatibleCheckpointError):
            second.load_state({}, 1)

    def test_invalid_hyperparameters(self):
        with self.assertRaises(ConfigurationError):
            AdamW([], lr=0.0)
        with self.assertRaises(ConfigurationError):
            AdamW([], betas=(1.0, 0.9))


class TestTrainer(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.ckpt = os.path.join(self.temp_dir, 'weights.bin')
        self.samples = toy_samples()
        self.settings = TrainSettings(epochs=4, lr=5e-3, warmup_epochs=0, seed=0)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_settings_validation(self):
        with self.assertRaises(ConfigurationError):
            TrainSettings(epochs=0).validate()
        with self.assertRaises(ConfigurationError):
            TrainSettings(lr=1e-3, min_lr=1e-2).validate()

    def test_last_checkpoint_path(self):
        self.assertEqual(last_checkpoint_path('run/w.bin'), 'run/w.last.bin')
        self.assertEqual(last_checkpoint_path('run/w'), 'run/w.last.bin')

    def test_loss_decreases_and_artifacts_written(self):
        _, model = toy_model()
        seen = []
        trainer = Trainer(model, self.settings, checkpoint_path=self.ckpt,
                          on_epoch_end=lambda epoch, loss: seen.append(epoch))
        manifest = trainer.fit(self.samples)
        losses = [m['loss'] for m in manifest.epoch_metrics]
        self.assertEqual(len(losses), 4)
        self.assertLess(losses[-1], losses[0])
        self.assertEqual(seen, [1, 2, 3, 4])
        self.assertEqual(trainer.stats.steps, 12)
        self.assertTrue(os.path.exists(self.ckpt))
        self.assertTrue(os.path.exists(last_checkpoint_path(self.ckpt)))
        with open(f"{self.ckpt}.manifest.json") as f:
            saved = json.load(f)
        self.assertEqual(saved['weights_sha256'], manifest.weights_sha256)
        self.assertIsNotNone(saved['finished_at'])

    def test_epoch_order_depends_only_on_seed_and_epoch(self):
        _, model = toy_model()
        trainer = Trainer(model, self.settings)
        np.testing.assert_array_equal(trainer.epoch_order(2, 10), trainer.epoch_order(2, 10))
        self.assertEqual(sorted(trainer.epoch_order(1, 10)), list(range(10)))

    def test_resume_reproduces_uninterrupted_run(self):
        full_store, full_model = toy_model()
        Trainer(full_model, self.settings).fit(self.samples, epochs=3)

        def interrupt(epoch, loss):
            if epoch == 2:
                raise KeyboardInterrupt

        _, partial_model = toy_model()
        partial = Trainer(partial_model, self.settings, checkpoint_path=self.ckpt, on_epoch_end=interrupt)
        partial.fit(self.samples, epochs=3)
        self.assertEqual(partial.stats.epochs_completed, 2)

        resumed_store, resumed_model = toy_model()
        resumed = Trainer(resumed_model, self.settings)
        self.assertEqual(resumed.resume(last_checkpoint_path(self.ckpt)), 2)
        resumed.fit(self.samples, epochs=3)
        self.assertEqual(resumed.stats.steps, 9)
        for name in full_store:
            np.testing.assert_array_equal(resumed_store[name].data, full_store[name].data)

    def test_resume_needs_optimizer_state(self):
        store, model = toy_model()
        store.save(self.ckpt)
        with self.assertRaises(IncompatibleCheckpointError):
            Trainer(model, self.settings).resume(self.ckpt)

    def test_non_finite_loss_writes_diagnostics(self):
        store, model = toy_model()
        store['matcher.bin_score'].data = np.full((1, 1), np.inf, dtype=np.float32)
        failures = []
        trainer = Trainer(model, self.settings, checkpoint_path=self.ckpt,
                          on_error=lambda index, error: failures.append(index))
        with self.assertRaises(NumericError):
            trainer.fit(self.samples)
        self.assertEqual(len(failures), 1)
        with open(f"{self.ckpt}.nan-dump.json") as f:
            dump = json.load(f)
        self.assertEqual(dump['pair_index'], failures[0])
        self.assertTrue(math.isinf(dump['param_norms']['matcher.bin_score']))

    def test_no_samples(self):
        _, model = toy_model()
        with self.assertRaises(ConfigurationError):
            Trainer(model, self.settings).fit([])


if __name__ == '__main__':
    unittest.main()
