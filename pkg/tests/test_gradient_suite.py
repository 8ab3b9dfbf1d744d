import unittest

import numpy as np

from src.evaluation.gradient_suite import _weighted, model_case, op_cases, run_suite, toy_pair
from src.tensor import check_gradients


class TestGradientSuite(unittest.TestCase):
    def test_every_op_case_passes(self):
        checks = run_suite(seeds=0, op_seeds=20, include_model=False)
        self.assertEqual({c.name for c in checks}, set(op_cases(np.random.default_rng(0))))
        self.assertEqual({c.seed for c in checks}, set(range(20)))
        failed = [(c.name, c.seed, c.max_abs_error) for c in checks if not c.passed]
        self.assertEqual(failed, [])

    def test_toy_models_pass(self):
        checks = run_suite(seeds=10, op_seeds=0)
        self.assertEqual(sum(c.name == 'model_paraformer' for c in checks), 10)
        self.assertEqual({c.name for c in checks},
                         {'model_paraformer', 'model_paraformer_u', 'model_serial_baseline'})
        failed = [(c.name, c.seed, c.max_abs_error) for c in checks if not c.passed]
        self.assertEqual(failed, [])

    def test_default_suite_doubles_op_seeds(self):
        checks = run_suite(seeds=1, include_model=False)
        self.assertEqual({c.seed for c in checks}, {0, 1})

    def test_key_bias_gradient_is_zero_and_passes(self):
        """Softmax ignores a per-row shift, so a key bias gets no gradient at all."""
        for name in ('serial_pair', 'parallel_layer_unshared'):
            rng = np.random.default_rng(0)
            fn, tensors, eps = op_cases(rng)[name]
            biases = {k: t for k, t in tensors.items() if k.endswith('.k.bias')}
            self.assertTrue(biases, name)
            results = check_gradients(_weighted(fn, rng), biases, eps=eps, tolerance=1e-3, rng=rng)
            self.assertTrue(all(r.passed for r in results), results)
            for key, t in biases.items():
                self.assertLess(np.max(np.abs(t.grad)), 1e-10, key)

    def test_toy_model_gradients(self):
        (fn, tensors, eps), model = model_case(0)
        self.assertEqual(model.store['matcher.bin_score'].dtype, np.float64)
        results = check_gradients(fn, tensors, eps=eps, tolerance=1e-3, max_entries=3,
                                  rng=np.random.default_rng(0))
        self.assertEqual(len(results), len(model.store))
        self.assertTrue(all(r.passed for r in results), [r for r in results if not r.passed])

    def test_toy_pair_labels_are_consistent(self):
        sample = toy_pair(np.random.default_rng(0))
        self.assertEqual(sample.gt_matches.shape, (4, 2))
        for labelled, unmatched in ((sample.gt_matches[:, 0], sample.gt_unmatched_x),
                                    (sample.gt_matches[:, 1], sample.gt_unmatched_y)):
            self.assertEqual(sorted(np.concatenate([labelled, unmatched])), list(range(6)))

    def test_failures_are_reported(self):
        checks = run_suite(seeds=1, tolerance=0.0, atol=0.0, include_model=False)
        self.assertTrue(any(not c.passed for c in checks))


if __name__ == '__main__':
    unittest.main()
