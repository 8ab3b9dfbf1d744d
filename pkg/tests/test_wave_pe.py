"""Tests for the position encoders."""
import math
import unittest

import numpy as np

from src.data.keypoints import KeypointSet, normalize_rows
from src.exceptions import ConfigurationError
from src.models.param_store import ParamStore
from src.nn.wave_pe import (
    IdentityPositionEncoder,
    MLPPositionEncoder,
    WavePositionEncoder,
    build_position_encoder,
    keypoint_inputs,
    normalize_positions,
    wave_encode,
)
from src.tensor import Tensor


def make_keypoints(rng, m=5, dim=8, size=(640, 480)):
    positions = np.column_stack([rng.uniform(0, size[0], m), rng.uniform(0, size[1], m),
                                 rng.uniform(0, 1, m)])
    return KeypointSet(positions, normalize_rows(rng.standard_normal((m, dim))), size)


class TestNormalizePositions(unittest.TestCase):
    def test_center_maps_to_origin(self):
        out = normalize_positions(np.array([[320.0, 240.0, 0.5]]), (640, 480))
        np.testing.assert_allclose(out, [[0.0, 0.0, 0.5]])

    def test_scaled_by_longer_side(self):
        out = normalize_positions(np.array([[0.0, 0.0, 1.0]]), (640, 480))
        np.testing.assert_allclose(out, [[-0.5, -240.0 / 640.0, 1.0]])

    def test_input_not_modified(self):
        pos = np.array([[10.0, 20.0, 0.1]])
        normalize_positions(pos, (100, 100))
        np.testing.assert_array_equal(pos, [[10.0, 20.0, 0.1]])


class TestWavePositionEncoder(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.store = ParamStore()
        self.encoder = WavePositionEncoder(self.store, 'pe', 8, self.rng)
        self.kp = make_keypoints(self.rng)

    def test_identity_at_initialization(self):
        """The fusion MLP ends zero-initialized, so x0 equals the descriptors."""
        out = wave_encode(self.kp, self.encoder)
        np.testing.assert_allclose(out.data, self.kp.descriptors, atol=1e-7)

    def test_component_shapes(self):
        parts = self.encoder.components(*keypoint_inputs(self.kp))
        self.assertEqual(parts.amplitude.shape, (5, 8))
        self.assertEqual(parts.phase.shape, (5, 8))
        self.assertEqual(parts.encoded.shape, (5, 8))

    def test_position_changes_output_once_fusion_is_nonzero(self):
        self.store.perturb(np.random.default_rng(1))
        moved = KeypointSet(self.kp.positions + np.array([5.0, 5.0, 0.0], dtype=np.float32),
                            self.kp.descriptors, self.kp.image_size)
        a = wave_encode(self.kp, self.encoder).data
        b = wave_encode(moved, self.encoder).data
        self.assertFalse(np.allclose(a, b))

    def test_row_independent(self):
        """Encoding a subset of points gives the same rows as encoding all of them."""
        self.store.perturb(np.random.default_rng(2))
        full = wave_encode(self.kp, self.encoder).data
        sub = KeypointSet(self.kp.positions[[3, 1]], self.kp.descriptors[[3, 1]], self.kp.image_size)
        np.testing.assert_allclose(wave_encode(sub, self.encoder).data, full[[3, 1]], atol=1e-6)

    def test_parameter_layout(self):
        self.assertEqual(len(self.store), 12)
        self.assertEqual(self.store['pe.phase.0.weight'].shape, (3, 8))
        self.assertEqual(self.store['pe.fuse.0.weight'].shape, (16, 16))

    def test_descriptor_dim_mismatch(self):
        _, pos = keypoint_inputs(self.kp)
        with self.assertRaises(ConfigurationError):
            self.encoder(Tensor(np.zeros((5, 4))), pos)


class TestOtherEncoders(unittest.TestCase):
    def test_mlp_pe_identity_at_initialization(self):
        rng = np.random.default_rng(3)
        store = ParamStore()
        encoder = MLPPositionEncoder(store, 'pe', 8, rng)
        kp = make_keypoints(rng)
        out = encoder(*keypoint_inputs(kp))
        np.testing.assert_allclose(out.data, kp.descriptors, atol=1e-7)
        self.assertEqual(store['pe.0.weight'].shape, (3, 32))
        self.assertEqual(store['pe.3.weight'].shape, (128, 8))

    def test_identity_encoder(self):
        kp = make_keypoints(np.random.default_rng(4))
        out = IdentityPositionEncoder(8)(*keypoint_inputs(kp))
        np.testing.assert_array_equal(out.data, kp.descriptors)

    def test_build_unknown_kind(self):
        with self.assertRaises(ConfigurationError):
            build_position_encoder('fourier', ParamStore(), 8, np.random.default_rng(0))

    def test_build_without_rng_requires_weights(self):
        store = ParamStore()
        build_position_encoder('wave', store, 8, np.random.default_rng(0))
        rebuilt = build_position_encoder('wave', store, 8)
        self.assertIsInstance(rebuilt, WavePositionEncoder)
        self.assertEqual(store.unclaimed(), [])


def loop_mlp(weights, prefix, row):
    """One MLP row by row: ReLU after every layer but the last."""
    layers = sorted({int(n.split('.')[-2]) for n in weights if n.startswith(prefix + '.')})
    out = np.asarray(row, dtype=np.float64)
    for i in layers:
        w, b = weights[f"{prefix}.{i}.weight"], weights[f"{prefix}.{i}.bias"][0]
        out = np.array([sum(out[k] * w[k, c] for k in range(w.shape[0])) + b[c] for c in range(w.shape[1])])
        if i != layers[-1]:
            out = np.maximum(out, 0.0)
    return out


class TestLoopOracles(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(7)
        self.kp = make_keypoints(self.rng, m=4)
        _, self.positions = keypoint_inputs(self.kp, np.float64)

    def float64_encoder(self, cls):
        store = ParamStore()
        cls(store, 'pe', 8, self.rng)
        store.perturb(np.random.default_rng(8))
        store64 = store.astype(np.float64)
        weights = {n: t.data for n, t in store64.items()}
        return cls(store64, 'pe', 8), weights

    def test_wave_pe_matches_row_by_row_evaluation(self):
        encoder, weights = self.float64_encoder(WavePositionEncoder)
        out = wave_encode(self.kp, encoder, dtype=np.float64).data
        for j in range(4):
            d = self.kp.descriptors[j].astype(np.float64)
            amplitude = loop_mlp(weights, 'pe.amplitude', d)
            phase = loop_mlp(weights, 'pe.phase', self.positions.data[j])
            wave = [a * math.cos(t) for a, t in zip(amplitude, phase)] + \
                   [a * math.sin(t) for a, t in zip(amplitude, phase)]
            expected = d + loop_mlp(weights, 'pe.fuse', wave)
            np.testing.assert_allclose(out[j], expected, atol=1e-6)

    def test_mlp_pe_matches_row_by_row_evaluation(self):
        encoder, weights = self.float64_encoder(MLPPositionEncoder)
        descriptors, _ = keypoint_inputs(self.kp, np.float64)
        out = encoder(descriptors, self.positions).data
        for j in range(4):
            expected = descriptors.data[j] + loop_mlp(weights, 'pe', self.positions.data[j])
            np.testing.assert_allclose(out[j], expected, atol=1e-6)

    def test_descriptors_drive_amplitude_not_phase(self):
        encoder, _ = self.float64_encoder(WavePositionEncoder)
        descriptors, _ = keypoint_inputs(self.kp, np.float64)
        other = Tensor(normalize_rows(self.rng.standard_normal((4, 8))), dtype=np.float64)
        a = encoder.components(descriptors, self.positions)
        b = encoder.components(other, self.positions)
        np.testing.assert_array_equal(a.phase.data, b.phase.data)
        self.assertFalse(np.allclose(a.amplitude.data, b.amplitude.data))

    def test_zero_phase_leaves_only_the_real_branch(self):
        store = ParamStore()
        encoder = WavePositionEncoder(store, 'pe', 8, self.rng)
        store.perturb(np.random.default_rng(9))
        store.fill('pe.phase', 0.0)
        parts = encoder.components(*keypoint_inputs(self.kp))
        np.testing.assert_array_equal(parts.phase.data, 0.0)
        np.testing.assert_array_equal(parts.imag.data, 0.0)
        np.testing.assert_array_equal(parts.real.data, parts.amplitude.data)


if __name__ == '__main__':
    unittest.main()
