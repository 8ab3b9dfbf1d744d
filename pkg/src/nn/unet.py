"""
ParaFormer-U: a graph U-Net of parallel attention stages over keypoint sets.

Points are pooled after stages 1 and 2 and restored before stages 4 and 5.
Pooling keeps the top half of the points by score and gates the kept features
with sigmoid(score); unpooling scatters features back to their original rows
and leaves zeros elsewhere, after which the encoder skip features are added.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from src.exceptions import ConfigurationError, ContractError
from src.models.config import StageConfig
from src.models.param_store import ParamStore
from src.nn.attention import AttentionMaps, ParallelAttentionLayer
from src.nn.layers import INIT_LINEAR, Linear, init_weight
from src.tensor import Tensor, ops

logger = logging.getLogger('ParaFormer')

POOL_LEVELS = 2


@dataclass
class PoolingRecord:
    """What one pooling step kept: row indices ranked by score, and the scores of every row."""
    idx: np.ndarray
    s: np.ndarray
    k: int
    n_prev: int

    def validate(self) -> 'PoolingRecord':
        if not 1 <= self.k <= self.n_prev:
            raise ContractError(f"pooling kept {self.k} of {self.n_prev} rows")
        if self.idx.shape != (self.k,):
            raise ContractError(f"record holds {self.idx.shape[0]} indices for k={self.k}")
        if self.idx.min() < 0 or self.idx.max() >= self.n_prev:
            raise ContractError("pooling index outside the pre-pool point range")
        if np.unique(self.idx).size != self.k:
            raise ContractError("pooling index collision")
        return self

    @property
    def dropped(self) -> np.ndarray:
        mask = np.ones(self.n_prev, dtype=bool)
        mask[self.idx] = False
        return np.flatnonzero(mask)


def pool_count(n: int) -> int:
    return math.ceil(n / 2)


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, best first; equal scores keep index order."""
    n = scores.shape[0]
    if k < 1 or k > n:
        raise ContractError(f"cannot keep {k} of {n} points")
    return np.argsort(-scores, kind='stable')[:k]


def _gate(x: Tensor, scores: Tensor, idx: np.ndarray, proj: Optional[Linear]) -> Tensor:
    """proj(x[idx]) ⊙ sigmoid(scores[idx]); `scores` is an n × 1 column."""
    picked = ops.gather_rows(x, idx)
    if proj is not None:
        picked = proj(picked)
    gate = ops.sigmoid(ops.gather_rows(scores, idx))
    return ops.mul(picked, gate)


def attentional_pool(x: Tensor, self_map: Tensor, k: int, proj: Optional[Linear] = None
                     ) -> Tuple[Tensor, PoolingRecord]:
    """
    Keep the k points that receive the most attention.

    Args:
        x: n × C features
        self_map: n × n row-stochastic self-attention map (heads already averaged)
        k: number of points to keep
        proj: optional C → C' projection applied to the kept rows

    Returns:
        (k × C' gated features, pooling record)
    """
    n = x.shape[0]
    if self_map.shape != (n, n):
        raise ContractError(f"self map {self_map.shape} does not match {n} points")
    column_sums = ops.transpose(ops.reduce_sum(self_map, axis=0))
    s = column_sums.data.reshape(-1).astype(np.float64)
    idx = top_k(s, k)
    record = PoolingRecord(idx=idx, s=s, k=k, n_prev=n)
    return _gate(x, column_sums, idx, proj), record


def gpool(x: Tensor, proj_vec: Tensor, k: int, proj: Optional[Linear] = None
          ) -> Tuple[Tensor, PoolingRecord]:
    """Graph U-Net pooling: scores are the projection x·w/‖w‖, then the same top-k gating."""
    n, c = x.shape
    if proj_vec.shape != (c, 1):
        raise ConfigurationError(f"gPool vector {proj_vec.shape} does not match {c} channels")
    scores = ops.matmul(x, ops.l2_normalize(proj_vec))
    s = scores.data.reshape(-1).astype(np.float64)
    idx = top_k(s, k)
    return _gate(x, scores, idx, proj), PoolingRecord(idx=idx, s=s, k=k, n_prev=n)


def random_pool(x: Tensor, k: int, seed, proj: Optional[Linear] = None
                ) -> Tuple[Tensor, PoolingRecord]:
    """Keep k points drawn uniformly without replacement; no gating."""
    n = x.shape[0]
    if k < 1 or k > n:
        raise ContractError(f"cannot keep {k} of {n} points")
    idx = np.random.default_rng(seed).choice(n, size=k, replace=False).astype(np.int64)
    picked = ops.gather_rows(x, idx)
    if proj is not None:
        picked = proj(picked)
    return picked, PoolingRecord(idx=idx, s=np.zeros(n), k=k, n_prev=n)


def unpool(x: Tensor, record: PoolingRecord, proj: Optional[Linear] = None) -> Tensor:
    """Scatter k rows back to their original positions among n_prev; other rows are zero."""
    if x.shape[0] != record.k:
        raise ContractError(f"unpool got {x.shape[0]} rows for a record of k={record.k}")
    record.validate()
    if proj is not None:
        x = proj(x)
    return ops.scatter_rows(x, record.idx, record.n_prev)


@dataclass
class UNetTrace:
    """Per-stage bookkeeping of one forward pass."""
    point_counts: List[Tuple[int, int]] = field(default_factory=list)
    records_x: List[PoolingRecord] = field(default_factory=list)
    records_y: List[PoolingRecord] = field(default_factory=list)
    maps: List[AttentionMaps] = field(default_factory=list)


class GraphUNet:
    """Five stages of parallel attention layers with two pool/unpool levels and skip adds."""

    def __init__(self, store: ParamStore, name: str, stages: StageConfig, heads: int = 4,
                 pooling: str = 'attentional', seed: int = 0,
                 share_qkv: bool = True, share_merge: bool = True,
                 share_attn_weights: bool = True, share_ffn: bool = False,
                 rng: Optional[np.random.Generator] = None):
        stages.validate(heads)
        self.stages = stages
        self.pooling = pooling
        self.seed = seed
        dims = stages.dims

        self.layers: List[List[ParallelAttentionLayer]] = []
        for s, (depth, dim) in enumerate(zip(stages.depths, dims)):
            self.layers.append([
                ParallelAttentionLayer(store, f"{name}.stage{s}.layer{i}", dim, heads,
                                       share_qkv, share_merge, share_attn_weights, share_ffn, rng)
                for i in range(depth)])

        self.pool_proj = [Linear(store, f"{name}.pool{lv}.proj", dims[lv], dims[lv + 1], rng)
                          for lv in range(POOL_LEVELS)]
        # unpool level 0 feeds stage 4, level 1 feeds stage 5
        self.unpool_proj = [Linear(store, f"{name}.unpool{lv}.proj", dims[2 + lv], dims[3 + lv], rng)
                            for lv in range(POOL_LEVELS)]
        self.score_vecs: List[str] = []
        if pooling == 'gpool':
            for lv in range(POOL_LEVELS):
                vec_name = f"{name}.pool{lv}.score"
                if rng is not None:
                    store.add(vec_name, init_weight(rng, dims[lv], 1, INIT_LINEAR))
                else:
                    store.require(vec_name, (dims[lv], 1))
                self.score_vecs.append(vec_name)
        self.store = store

    @property
    def total_layers(self) -> int:
        return sum(len(stage) for stage in self.layers)

    def _run_stage(self, s: int, x: Tensor, y: Tensor, trace: UNetTrace
                   ) -> Tuple[Tensor, Tensor, AttentionMaps]:
        trace.point_counts.append((x.shape[0], y.shape[0]))
        maps = None
        for layer in self.layers[s]:
            x, y, maps = layer(x, y)
            trace.maps.append(maps)
        return x, y, maps

    def _pool(self, level: int, side: int, x: Tensor, maps: AttentionMaps
              ) -> Tuple[Tensor, PoolingRecord]:
        k = pool_count(x.shape[0])
        proj = self.pool_proj[level]
        if self.pooling == 'attentional':
            self_map = maps.mean_self_x() if side == 0 else maps.mean_self_y()
            return attentional_pool(x, self_map, k, proj)
        if self.pooling == 'gpool':
            return gpool(x, self.store[self.score_vecs[level]], k, proj)
        return random_pool(x, k, [self.seed, level, side], proj)

    def __call__(self, x: Tensor, y: Tensor) -> Tuple[Tensor, Tensor, UNetTrace]:
        for n in (x.shape[0], y.shape[0]):
            if n < 4:
                raise ContractError(f"ParaFormer-U needs at least 4 points per image, got {n}")
        trace = UNetTrace()
        skips: List[Tuple[Tensor, Tensor]] = []

        for level in range(POOL_LEVELS):
            x, y, maps = self._run_stage(level, x, y, trace)
            skips.append((x, y))
            x, rec_x = self._pool(level, 0, x, maps)
            y, rec_y = self._pool(level, 1, y, maps)
            trace.records_x.append(rec_x)
            trace.records_y.append(rec_y)

        x, y, _ = self._run_stage(2, x, y, trace)

        for lv in range(POOL_LEVELS):
            enc = POOL_LEVELS - 1 - lv
            skip_x, skip_y = skips[enc]
            x = ops.add(unpool(x, trace.records_x[enc], self.unpool_proj[lv]), skip_x)
            y = ops.add(unpool(y, trace.records_y[enc], self.unpool_proj[lv]), skip_y)
            x, y, _ = self._run_stage(3 + lv, x, y, trace)

        logger.debug(f"U-Net point counts per stage: {trace.point_counts}")
        return x, y, trace


def unet_forward(x: Tensor, y: Tensor, unet: GraphUNet) -> Tuple[Tensor, Tensor, UNetTrace]:
    return unet(x, y)