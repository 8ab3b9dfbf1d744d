"""Tests for model configuration, the assembled model and checkpoints."""
import os
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.data.keypoints import KeypointSet
from src.data.synthetic import PairSettings, make_pair
from src.evaluation.gradient_suite import toy_config, toy_pair
from src.exceptions import ConfigurationError, ContractError, IncompatibleCheckpointError
from src.models.config import ABLATIONS, ModelConfig, StageConfig, ablation_config
from src.models.param_store import ParamStore
from src.models.paraformer import ParaFormer, build, count_parameters, load_model, read_config, save
from src.training.trainer import Trainer, TrainSettings


class TestModelConfig(unittest.TestCase):
    def test_full_size_defaults(self):
        cfg = ModelConfig.defaults('paraformer')
        self.assertEqual((cfg.descriptor_dim, cfg.num_layers, cfg.heads, cfg.pe), (256, 9, 4, 'wave'))
        self.assertEqual(ModelConfig.defaults('serial_baseline').pe, 'mlp')
        u = ModelConfig.defaults('paraformer_u')
        self.assertEqual(u.stage_depths, (2, 1, 2, 1, 2))
        self.assertEqual(u.stage_dims, (256, 384, 128, 384, 256))
        self.assertEqual(u.attention_layers, 8)

    def test_scaled_stage_dims(self):
        self.assertEqual(StageConfig.for_descriptor_dim(8, 2).dims, (8, 12, 4, 12, 8))
        self.assertEqual(StageConfig.for_descriptor_dim(64, 4).dims, (64, 96, 32, 96, 64))

    def test_validation(self):
        for bad in ({'variant': 'transformer'}, {'pe': 'sine'}, {'descriptor_dim': 10, 'heads': 4},
                    {'sinkhorn_iterations': 0}, {'match_threshold': 1.5}, {'pooling': 'max'}):
            with self.subTest(bad=bad):
                with self.assertRaises(ConfigurationError):
                    ModelConfig(**bad).validate()

    def test_from_dict_rejects_unknown_keys(self):
        with self.assertRaises(ConfigurationError):
            ModelConfig.from_dict({'variant': 'paraformer', 'dropout': 0.1})

    def test_round_trip_through_dict(self):
        cfg = ModelConfig.defaults('paraformer_u', 16, heads=2)
        self.assertEqual(ModelConfig.from_dict(cfg.to_dict()), cfg)

    def test_architecture_hash_ignores_inference_settings(self):
        cfg = ModelConfig.defaults('paraformer', 8, heads=2)
        self.assertEqual(cfg.architecture_hash(),
                         cfg.with_overrides(match_threshold=0.5, sinkhorn_iterations=3).architecture_hash())
        self.assertNotEqual(cfg.architecture_hash(), cfg.with_overrides(share_ffn=True).architecture_hash())

    def test_every_ablation_builds_a_config(self):
        for name in ABLATIONS:
            with self.subTest(name=name):
                ablation_config(name, 8, heads=2).validate()
        with self.assertRaises(ConfigurationError):
            ablation_config('share_everything')


class TestParaFormer(unittest.TestCase):
    def setUp(self):
        self.sample = toy_pair(np.random.default_rng(0))

    def test_forward_shapes(self):
        for variant in ('paraformer', 'serial_baseline', 'paraformer_u'):
            with self.subTest(variant=variant):
                _, model = build(toy_config(variant), seed=0)
                result = model(self.sample.kp_x, self.sample.kp_y)
                self.assertEqual(result.assignment.shape, (7, 7))
                self.assertTrue(result.matches.is_injective())
                self.assertTrue(np.all(result.matches.confidence <= 1.0))

    def test_attention_rounds(self):
        _, parallel = build(toy_config('paraformer'), seed=0)
        _, serial = build(toy_config('serial_baseline'), seed=0)
        self.assertEqual(parallel(self.sample.kp_x, self.sample.kp_y).diagnostics['attention_rounds'], 2)
        self.assertEqual(serial(self.sample.kp_x, self.sample.kp_y).diagnostics['attention_rounds'], 4)

    def test_deterministic_build(self):
        first, _ = build(toy_config(), seed=3)
        second, _ = build(toy_config(), seed=3)
        other, _ = build(toy_config(), seed=4)
        for name in first:
            np.testing.assert_array_equal(first[name].data, second[name].data)
        self.assertFalse(all(np.array_equal(first[n].data, other[n].data) for n in first))

    def test_parameter_count_matches_store(self):
        cfg = toy_config()
        store, _ = build(cfg)
        self.assertEqual(count_parameters(cfg), store.count())
        shared = count_parameters(cfg.with_overrides(share_ffn=True))
        self.assertLess(shared, store.count())

    def test_permuting_x_permutes_assignment_rows(self):
        rng = np.random.default_rng(2)
        for variant in ('paraformer', 'paraformer_u'):
            store, model = build(toy_config(variant), seed=1)
            store.perturb(rng)
            base = model(self.sample.kp_x, self.sample.kp_y).assignment.log_P.data
            for trial in range(20):
                perm = rng.permutation(len(self.sample.kp_x))
                with self.subTest(variant=variant, trial=trial):
                    permuted = model(self.sample.kp_x.permuted(perm), self.sample.kp_y).assignment.log_P.data
                    np.testing.assert_array_equal(permuted[:-1], base[:-1][perm])
                    np.testing.assert_array_equal(permuted[-1], base[-1])

    def test_position_encoding_reaches_the_output(self):
        cfg = toy_config()
        wave_store, wave = build(cfg, seed=0)
        wave_store.perturb(np.random.default_rng(3))
        none_cfg = cfg.with_overrides(pe='none')
        none_store = ParamStore(none_cfg.architecture_hash())
        for name, t in wave_store.items():
            if not name.startswith('pe.'):
                none_store.add(name, t.data.copy())
        none_store.claimed.clear()
        plain = ParaFormer(none_cfg, none_store)
        a = wave(self.sample.kp_x, self.sample.kp_y).assignment.log_P.data
        b = plain(self.sample.kp_x, self.sample.kp_y).assignment.log_P.data
        self.assertFalse(np.allclose(a, b))

    def test_loss_is_positive_scalar(self):
        _, model = build(toy_config(), seed=0)
        loss = model.loss(self.sample)
        self.assertEqual(loss.shape, (1, 1))
        self.assertGreater(loss.item(), 0.0)

    def test_input_checks(self):
        _, model = build(toy_config(), seed=0)
        wide = KeypointSet(np.array([[1.0, 1.0, 0.5]]), np.ones((1, 16)) / 4.0, (64, 48))
        with self.assertRaises(ConfigurationError):
            model(wide, self.sample.kp_y)
        _, unet = build(toy_config('paraformer_u'), seed=0)
        few = KeypointSet(self.sample.kp_x.positions[:3], self.sample.kp_x.descriptors[:3], (64, 48))
        with self.assertRaises(ContractError):
            unet(few, self.sample.kp_y)

    def test_unused_tensors_refused(self):
        store, _ = build(toy_config(), seed=0)
        store.add('layers.9.qkv.q.weight', np.zeros((8, 8), dtype=np.float32))
        store.claimed.clear()
        with self.assertRaises(IncompatibleCheckpointError):
            ParaFormer(toy_config(), store)


class TestCheckpoints(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.temp_dir, 'weights.bin')
        self.cfg = toy_config()
        self.store, self.model = build(self.cfg, seed=0)
        self.store.perturb(np.random.default_rng(1))

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_save_and_load_reproduce_outputs(self):
        save(self.store, self.path, self.cfg)
        _, loaded = load_model(self.path, self.cfg)
        sample = toy_pair(np.random.default_rng(5))
        a = self.model(sample.kp_x, sample.kp_y).assignment.log_P.data
        b = loaded(sample.kp_x, sample.kp_y).assignment.log_P.data
        np.testing.assert_array_equal(a, b)
        self.assertEqual(read_config(self.path), self.cfg)

    def test_save_load_save_is_byte_identical(self):
        save(self.store, self.path, self.cfg)
        loaded, _ = load_model(self.path, self.cfg)
        again = os.path.join(self.temp_dir, 'again.bin')
        save(loaded, again, self.cfg)
        self.assertEqual(Path(self.path).read_bytes(), Path(again).read_bytes())

    def test_other_architecture_refused(self):
        save(self.store, self.path, self.cfg)
        with self.assertRaises(IncompatibleCheckpointError):
            load_model(self.path, self.cfg.with_overrides(share_ffn=True))

    def test_truncated_checkpoint_refused(self):
        save(self.store, self.path, self.cfg)
        data = Path(self.path).read_bytes()
        Path(self.path).write_bytes(data[: len(data) // 2])
        with self.assertRaises(IncompatibleCheckpointError):
            load_model(self.path, self.cfg)

    def test_missing_config_metadata(self):
        save(self.store, self.path)
        with self.assertRaises(IncompatibleCheckpointError):
            read_config(self.path)


@unittest.skipUnless(os.environ.get('PARAFORMER_SLOW_TESTS') == '1',
                     'set PARAFORMER_SLOW_TESTS=1 to run training runs')
class TestTrainedToyModel(unittest.TestCase):
    def test_identical_images_match_themselves(self):
        rng = np.random.default_rng(0)
        settings = PairSettings(n_keypoints=64, descriptor_dim=32, noise=0.1)
        train = [make_pair(rng, 64, settings=settings) for _ in range(100)]
        _, model = build(ModelConfig.defaults('paraformer', 32, heads=4, num_layers=3), 0)
        Trainer(model, TrainSettings(epochs=20, lr=1e-3)).fit(train)

        for _ in range(5):
            kp = make_pair(rng, 64, settings=settings).kp_x
            matches = model(kp, kp).matches
            identity = int(np.sum(matches.idx_x == matches.idx_y))
            self.assertGreaterEqual(identity, 0.9 * len(kp))


if __name__ == '__main__':
    unittest.main()
