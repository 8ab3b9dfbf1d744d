"""
Optimal matching layer.

Scores between the two keypoint sets are augmented with a dustbin row and
column holding one learnable score, normalized by log-domain Sinkhorn
iterations into a soft partial assignment, and read out as mutual-best
matches above a confidence threshold.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from src.exceptions import ContractError
from src.models.param_store import ParamStore
from src.tensor import Tensor, ops

logger = logging.getLogger('ParaFormer')

DEFAULT_ITERATIONS = 100
DEFAULT_THRESHOLD = 0.2
DUSTBIN_INIT = 1.0


@dataclass
class Assignment:
    """
    Log soft assignment of shape (M+1) × (N+1); the last row and column are dustbins.

    Scaled so that rows 0..M-1 and columns 0..N-1 of exp(log_P) sum to 1 while the
    dustbin row and column carry masses N and M.
    """
    log_P: Tensor
    iterations_run: int
    dustbin_score: float

    @property
    def shape(self) -> Tuple[int, int]:
        return self.log_P.shape

    @property
    def num_x(self) -> int:
        return self.log_P.shape[0] - 1

    @property
    def num_y(self) -> int:
        return self.log_P.shape[1] - 1

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_P.data.astype(np.float64))


@dataclass
class MatchSet:
    """Extracted correspondences: X index, Y index and confidence, one entry per match."""
    idx_x: np.ndarray
    idx_y: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        self.idx_x = np.asarray(self.idx_x, dtype=np.int64).reshape(-1)
        self.idx_y = np.asarray(self.idx_y, dtype=np.int64).reshape(-1)
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        if not (self.idx_x.size == self.idx_y.size == self.confidence.size):
            raise ContractError("MatchSet columns differ in length")

    def __len__(self) -> int:
        return int(self.idx_x.size)

    def __iter__(self) -> Iterator[Tuple[int, int, float]]:
        for i, j, c in zip(self.idx_x, self.idx_y, self.confidence):
            yield int(i), int(j), float(c)

    def is_injective(self) -> bool:
        return (np.unique(self.idx_x).size == self.idx_x.size
                and np.unique(self.idx_y).size == self.idx_y.size)

    def as_dict(self):
        return {(int(i), int(j)): float(c) for i, j, c in self}

    @classmethod
    def empty(cls) -> 'MatchSet':
        return cls(np.zeros(0), np.zeros(0), np.zeros(0))


def score_matrix(x_out: Tensor, y_out: Tensor) -> Tensor:
    """S_ij = <x_i, y_j> / √C."""
    c = x_out.shape[1]
    return ops.scale(ops.matmul(x_out, ops.transpose(y_out)), 1.0 / math.sqrt(c))


def _augment(scores: Tensor, alpha: Tensor) -> Tensor:
    m, n = scores.shape
    bins_right = ops.expand(alpha, (m, 1))
    bins_bottom = ops.expand(alpha, (1, n))
    top = ops.concat([scores, bins_right], axis=1)
    bottom = ops.concat([bins_bottom, alpha], axis=1)
    return ops.concat([top, bottom], axis=0)


def sinkhorn(scores: Tensor, alpha: Tensor, iterations: int = DEFAULT_ITERATIONS) -> Assignment:
    """
    Log-domain Sinkhorn normalization of the dustbin-augmented scores.

    Args:
        scores: M × N score matrix
        alpha: 1 × 1 dustbin score
        iterations: number of row/column normalization rounds

    Returns:
        Assignment whose log_P stays differentiable w.r.t. scores and alpha

    Raises:
        ContractError: non-finite scores or iterations < 1
    """
    if iterations < 1:
        raise ContractError(f"Sinkhorn needs at least one iteration, got {iterations}")
    if not np.all(np.isfinite(scores.data)):
        raise ContractError("Sinkhorn received non-finite scores")
    if alpha.shape != (1, 1):
        raise ContractError(f"dustbin score must be 1 x 1, got {alpha.shape}")

    m, n = scores.shape
    dtype = scores.dtype
    couplings = _augment(scores, alpha)

    norm = -math.log(m + n)
    log_mu = np.full((m + 1, 1), norm, dtype=np.float64)
    log_mu[m, 0] = math.log(n) + norm if n > 0 else -np.inf
    log_nu = np.full((1, n + 1), norm, dtype=np.float64)
    log_nu[0, n] = math.log(m) + norm if m > 0 else -np.inf
    if not (np.isfinite(log_mu).all() and np.isfinite(log_nu).all()):
        raise ContractError("Sinkhorn needs at least one point on each side")
    log_mu_t = ops.as_tensor(log_mu, dtype=dtype)
    log_nu_t = ops.as_tensor(log_nu, dtype=dtype)

    u = ops.as_tensor(np.zeros((m + 1, 1)), dtype=dtype)
    v = ops.as_tensor(np.zeros((1, n + 1)), dtype=dtype)
    for _ in range(iterations):
        u = ops.sub(log_mu_t, ops.logsumexp(ops.add(couplings, v), axis=1))
        v = ops.sub(log_nu_t, ops.logsumexp(ops.add(couplings, u), axis=0))

    log_p = ops.add(ops.add(couplings, u), v)
    log_p = ops.add(log_p, ops.as_tensor(np.full((1, 1), -norm), dtype=dtype))
    return Assignment(log_P=log_p, iterations_run=iterations, dustbin_score=alpha.item())


def extract_matches(assignment: Assignment, threshold: float = DEFAULT_THRESHOLD) -> MatchSet:
    """Keep (i, j) when P_ij is the largest entry of row i and of column j and at least `threshold`."""
    m, n = assignment.num_x, assignment.num_y
    if m == 0 or n == 0:
        return MatchSet.empty()
    p = assignment.probabilities()[:m, :n]
    best_j = p.argmax(axis=1)
    best_i = p.argmax(axis=0)
    rows = np.arange(m)
    conf = p[rows, best_j]
    keep = (best_i[best_j] == rows) & (conf >= threshold)
    return MatchSet(rows[keep], best_j[keep], np.minimum(conf[keep], 1.0))


def matching_loss(assignment: Assignment, gt_matches: np.ndarray,
                  gt_unmatched_x: np.ndarray, gt_unmatched_y: np.ndarray) -> Tensor:
    """
    Negative log-likelihood of the ground truth under the augmented assignment.

    Averages −log P over matched pairs, over unmatched X points (read in the
    dustbin column) and over unmatched Y points (read in the dustbin row).

    Raises:
        ContractError: no ground-truth terms at all
    """
    m, n = assignment.num_x, assignment.num_y
    gt_matches = np.asarray(gt_matches, dtype=np.int64).reshape(-1, 2)
    ux = np.asarray(gt_unmatched_x, dtype=np.int64).reshape(-1)
    uy = np.asarray(gt_unmatched_y, dtype=np.int64).reshape(-1)
    rows = np.concatenate([gt_matches[:, 0], ux, np.full(uy.size, m, dtype=np.int64)])
    cols = np.concatenate([gt_matches[:, 1], np.full(ux.size, n, dtype=np.int64), uy])
    if rows.size == 0:
        raise ContractError("matching loss needs ground-truth labels")
    terms = ops.gather_elements(assignment.log_P, rows, cols)
    return ops.scale(ops.reduce_sum(terms), -1.0 / rows.size)


class OptimalMatcher:
    """Score matrix, Sinkhorn and the learnable dustbin score `{name}.bin_score`."""

    def __init__(self, store: ParamStore, name: str = 'matcher',
                 iterations: int = DEFAULT_ITERATIONS,
                 rng: Optional[np.random.Generator] = None):
        self.store = store
        self.param_name = f"{name}.bin_score"
        self.iterations = iterations
        if rng is not None:
            store.add(self.param_name, np.full((1, 1), DUSTBIN_INIT, dtype=np.float32))
        else:
            store.require(self.param_name, (1, 1))

    @property
    def bin_score(self) -> Tensor:
        return self.store[self.param_name]

    def __call__(self, x_out: Tensor, y_out: Tensor) -> Assignment:
        return sinkhorn(score_matrix(x_out, y_out), self.bin_score, self.iterations)
