"""Tests for pooling, unpooling and the graph U-Net."""
import unittest

import numpy as np

from src.exceptions import ConfigurationError, ContractError
from src.models.config import StageConfig
from src.models.param_store import ParamStore
from src.nn.unet import (
    GraphUNet,
    PoolingRecord,
    attentional_pool,
    gpool,
    pool_count,
    random_pool,
    top_k,
    unet_forward,
    unpool,
)
from src.tensor import Tensor

SIGMOID_ONE = 0.7310585786300049

TOY_STAGES = StageConfig(depths=(1, 1, 1, 1, 1), dims=(8, 12, 4, 12, 8))


class TestTopK(unittest.TestCase):
    def test_best_first(self):
        np.testing.assert_array_equal(top_k(np.array([0.1, 0.9, 0.5]), 2), [1, 2])

    def test_ties_keep_index_order(self):
        np.testing.assert_array_equal(top_k(np.array([1.0, 3.0, 3.0, 0.0]), 2), [1, 2])

    def test_invalid_k(self):
        with self.assertRaises(ContractError):
            top_k(np.ones(3), 0)
        with self.assertRaises(ContractError):
            top_k(np.ones(3), 4)

    def test_pool_count_rounds_up(self):
        self.assertEqual([pool_count(n) for n in (1, 4, 5, 9)], [1, 2, 3, 5])


class TestAttentionalPool(unittest.TestCase):
    def test_uniform_map_gates_by_sigmoid_one(self):
        """Every column of a uniform map sums to 1, so kept rows are scaled by sigmoid(1)."""
        n = 6
        x = Tensor(np.arange(n * 2, dtype=np.float32).reshape(n, 2))
        uniform = Tensor(np.full((n, n), 1.0 / n))
        out, record = attentional_pool(x, uniform, 3)
        np.testing.assert_array_equal(record.idx, [0, 1, 2])
        np.testing.assert_allclose(out.data, x.data[:3] * SIGMOID_ONE, rtol=1e-6)
        np.testing.assert_allclose(record.s, np.ones(n), rtol=1e-6)

    def test_keeps_most_attended_points(self):
        attention = np.array([[0.1, 0.6, 0.3],
                              [0.0, 0.5, 0.5],
                              [0.2, 0.7, 0.1]])
        x = Tensor(np.eye(3))
        out, record = attentional_pool(x, Tensor(attention), 2)
        np.testing.assert_array_equal(record.idx, [1, 2])
        np.testing.assert_allclose(record.s, [0.3, 1.8, 0.9], rtol=1e-6)
        expected = np.eye(3)[[1, 2]] * (1.0 / (1.0 + np.exp(-np.array([[1.8], [0.9]]))))
        np.testing.assert_allclose(out.data, expected, rtol=1e-6)

    def test_map_shape_checked(self):
        with self.assertRaises(ContractError):
            attentional_pool(Tensor(np.ones((3, 2))), Tensor(np.ones((2, 2))), 1)


class TestOtherPooling(unittest.TestCase):
    def test_gpool_scores_by_unit_projection(self):
        x = Tensor(np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]]))
        w = Tensor(np.array([[2.0], [0.0]]))
        out, record = gpool(x, w, 2)
        np.testing.assert_allclose(record.s, [1.0, 0.0, 3.0], rtol=1e-6)
        np.testing.assert_array_equal(record.idx, [2, 0])
        gate = 1.0 / (1.0 + np.exp(-np.array([[3.0], [1.0]])))
        np.testing.assert_allclose(out.data, x.data[[2, 0]] * gate, rtol=1e-6)

    def test_gpool_vector_shape(self):
        with self.assertRaises(ConfigurationError):
            gpool(Tensor(np.ones((3, 2))), Tensor(np.ones((3, 1))), 1)

    def test_random_pool_is_seeded(self):
        x = Tensor(np.random.default_rng(0).standard_normal((10, 4)))
        _, first = random_pool(x, 5, [1, 0, 0])
        _, second = random_pool(x, 5, [1, 0, 0])
        np.testing.assert_array_equal(first.idx, second.idx)
        self.assertEqual(np.unique(first.idx).size, 5)


class TestUnpool(unittest.TestCase):
    def test_scatter_leaves_zeros(self):
        record = PoolingRecord(idx=np.array([2, 0]), s=np.zeros(4), k=2, n_prev=4)
        out = unpool(Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])), record)
        np.testing.assert_array_equal(out.data, [[3, 4], [0, 0], [1, 2], [0, 0]])
        np.testing.assert_array_equal(record.dropped, [1, 3])

    def test_row_count_must_match_record(self):
        record = PoolingRecord(idx=np.array([1]), s=np.zeros(3), k=1, n_prev=3)
        with self.assertRaises(ContractError):
            unpool(Tensor(np.ones((2, 2))), record)

    def test_invalid_records(self):
        with self.assertRaises(ContractError):
            PoolingRecord(idx=np.array([1, 1]), s=np.zeros(3), k=2, n_prev=3).validate()
        with self.assertRaises(ContractError):
            PoolingRecord(idx=np.array([3]), s=np.zeros(3), k=1, n_prev=3).validate()
        with self.assertRaises(ContractError):
            PoolingRecord(idx=np.array([0, 1, 2]), s=np.zeros(2), k=3, n_prev=2).validate()


class TestGraphUNet(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def build(self, pooling='attentional'):
        return GraphUNet(ParamStore(), 'unet', TOY_STAGES, heads=2, pooling=pooling, rng=self.rng)

    def test_point_counts_and_shapes(self):
        unet = self.build()
        x = Tensor(self.rng.standard_normal((9, 8)))
        y = Tensor(self.rng.standard_normal((7, 8)))
        x_out, y_out, trace = unet_forward(x, y, unet)
        self.assertEqual(x_out.shape, (9, 8))
        self.assertEqual(y_out.shape, (7, 8))
        self.assertEqual(trace.point_counts, [(9, 7), (5, 4), (3, 2), (5, 4), (9, 7)])
        self.assertEqual([r.k for r in trace.records_x], [5, 3])
        self.assertEqual(StageConfig.point_counts(9), [9, 5, 3, 5, 9])
        self.assertEqual(unet.total_layers, 5)

    def test_every_pooling_runs(self):
        for pooling in ('attentional', 'gpool', 'random'):
            with self.subTest(pooling=pooling):
                unet = self.build(pooling)
                x_out, _, _ = unet(Tensor(self.rng.standard_normal((6, 8))),
                                   Tensor(self.rng.standard_normal((6, 8))))
                self.assertEqual(x_out.shape, (6, 8))

    def test_too_few_points(self):
        with self.assertRaises(ContractError):
            self.build()(Tensor(np.ones((3, 8))), Tensor(np.ones((6, 8))))

    def test_mirrored_dims_required(self):
        with self.assertRaises(ConfigurationError):
            GraphUNet(ParamStore(), 'unet', StageConfig(depths=(1,) * 5, dims=(8, 12, 4, 8, 8)),
                      heads=2, rng=self.rng)


if __name__ == '__main__':
    unittest.main()
