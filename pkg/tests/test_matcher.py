"""Tests for Sinkhorn normalization, match extraction and the matching loss."""
import math
import unittest

import numpy as np

from src.exceptions import ContractError
from src.models.param_store import ParamStore
from src.nn.matcher import (
    DUSTBIN_INIT,
    Assignment,
    MatchSet,
    OptimalMatcher,
    extract_matches,
    matching_loss,
    score_matrix,
    sinkhorn,
)
from src.tensor import Tensor


def f64(values):
    return Tensor(np.asarray(values, dtype=np.float64), dtype=np.float64)


def exp_domain_sinkhorn(scores, alpha, iterations):
    """Textbook multiplicative Sinkhorn on the dustbin-augmented kernel."""
    m, n = scores.shape
    z = np.full((m + 1, n + 1), alpha)
    z[:m, :n] = scores
    kernel = np.exp(z)
    mu = np.append(np.ones(m), n) / (m + n)
    nu = np.append(np.ones(n), m) / (m + n)
    b = np.ones(n + 1)
    for _ in range(iterations):
        a = mu / (kernel @ b)
        b = nu / (kernel.T @ a)
    return (m + n) * a[:, None] * kernel * b[None, :]


def assignment_from(p):
    return Assignment(log_P=f64(np.log(p)), iterations_run=1, dustbin_score=0.0)


class TestSinkhorn(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.scores = self.rng.standard_normal((4, 3))

    def test_matches_exp_domain_oracle(self):
        result = sinkhorn(f64(self.scores), f64([[0.5]]), iterations=20)
        expected = exp_domain_sinkhorn(self.scores, 0.5, 20)
        np.testing.assert_allclose(result.probabilities(), expected, rtol=1e-9, atol=1e-12)

    def test_marginals(self):
        p = sinkhorn(f64(self.scores), f64([[1.0]]), iterations=100).probabilities()
        m, n = self.scores.shape
        np.testing.assert_allclose(p[:m].sum(axis=1), np.ones(m), atol=1e-3)
        np.testing.assert_allclose(p[:, :n].sum(axis=0), np.ones(n), atol=1e-6)
        self.assertAlmostEqual(p[m].sum(), n, delta=1e-3)
        self.assertAlmostEqual(p[:, n].sum(), m, delta=1e-6)

    def test_shift_invariance(self):
        """Adding a constant to every score and to the dustbin leaves P unchanged."""
        base = sinkhorn(f64(self.scores), f64([[0.2]]), iterations=50).probabilities()
        shifted = sinkhorn(f64(self.scores + 7.0), f64([[7.2]]), iterations=50).probabilities()
        np.testing.assert_allclose(base, shifted, rtol=1e-8, atol=1e-12)

    def test_large_scores_stay_finite(self):
        result = sinkhorn(f64(self.scores * 500.0), f64([[1.0]]), iterations=10)
        self.assertTrue(np.all(np.isfinite(result.log_P.data)))
        self.assertEqual(result.shape, (5, 4))

    def test_invalid_inputs(self):
        with self.assertRaises(ContractError):
            sinkhorn(f64(self.scores), f64([[1.0]]), iterations=0)
        with self.assertRaises(ContractError):
            sinkhorn(Tensor(np.array([[np.inf]])), Tensor(np.ones((1, 1))))
        with self.assertRaises(ContractError):
            sinkhorn(f64(self.scores), f64([[1.0, 2.0]]))

    def test_score_matrix_scaling(self):
        x = f64([[1.0, 1.0, 1.0, 1.0]])
        y = f64([[2.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0]])
        np.testing.assert_allclose(score_matrix(x, y).data, [[1.0, 1.0]])


class TestExtractMatches(unittest.TestCase):
    def setUp(self):
        self.p = np.array([[0.90, 0.05, 0.05],
                           [0.10, 0.15, 0.75],
                           [0.05, 0.80, 1.15]])

    def test_mutual_best_above_threshold(self):
        matches = extract_matches(assignment_from(self.p), threshold=0.2)
        self.assertEqual(len(matches), 1)
        i, j, confidence = next(iter(matches))
        self.assertEqual((i, j), (0, 0))
        self.assertAlmostEqual(confidence, 0.9)

    def test_lower_threshold_keeps_weak_mutual_match(self):
        matches = extract_matches(assignment_from(self.p), threshold=0.1)
        self.assertEqual([(i, j) for i, j, _ in matches], [(0, 0), (1, 1)])
        self.assertTrue(matches.is_injective())

    def test_not_mutual_is_dropped(self):
        p = np.array([[0.6, 0.3, 0.1],
                      [0.7, 0.2, 0.1],
                      [0.1, 0.1, 1.0]])
        matches = extract_matches(assignment_from(p), threshold=0.0)
        self.assertEqual([(i, j) for i, j, _ in matches], [(1, 0)])

    def test_empty_side(self):
        self.assertEqual(len(extract_matches(assignment_from(np.ones((1, 3))))), 0)


class TestMatchingLoss(unittest.TestCase):
    def test_reads_matches_and_dustbins(self):
        p = np.array([[0.5, 0.2, 0.3],
                      [0.1, 0.4, 0.5],
                      [0.4, 0.4, 1.2]])
        loss = matching_loss(assignment_from(p), np.array([[0, 0]]), np.array([1]), np.array([1]))
        expected = -(math.log(0.5) + math.log(0.5) + math.log(0.4)) / 3.0
        self.assertAlmostEqual(loss.item(), expected, places=10)

    def test_no_labels(self):
        with self.assertRaises(ContractError):
            matching_loss(assignment_from(np.ones((2, 2))), np.zeros((0, 2)), [], [])


class TestMatchSet(unittest.TestCase):
    def test_column_lengths_must_agree(self):
        with self.assertRaises(ContractError):
            MatchSet([0, 1], [0], [0.5, 0.5])

    def test_injectivity(self):
        self.assertFalse(MatchSet([0, 1], [2, 2], [0.5, 0.5]).is_injective())
        self.assertEqual(MatchSet.empty().as_dict(), {})


class TestOptimalMatcher(unittest.TestCase):
    def test_dustbin_parameter(self):
        store = ParamStore()
        matcher = OptimalMatcher(store, iterations=5, rng=np.random.default_rng(0))
        self.assertEqual(matcher.bin_score.item(), DUSTBIN_INIT)
        x = Tensor(np.random.default_rng(1).standard_normal((3, 4)))
        assignment = matcher(x, x)
        self.assertEqual(assignment.shape, (4, 4))
        self.assertEqual(assignment.iterations_run, 5)


if __name__ == '__main__':
    unittest.main()
