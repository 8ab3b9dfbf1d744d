"""
Parallel self/cross attention and the serial self→cross baseline.

A parallel layer projects each image once, runs self- and cross-attention side by
side on those projections and fuses both messages with a two-layer MLP inside a
residual. With attention-weight sharing the y→x cross logits are the x→y logits
read transposed, so only one M×N logits product is computed per layer.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.exceptions import ConfigurationError, EmptyInputError
from src.models.param_store import ParamStore
from src.nn.layers import MLP, Linear
from src.tensor import Tensor, ops

logger = logging.getLogger('ParaFormer')


@dataclass
class AttentionMaps:
    """
    Per-head attention maps of one layer (h × rows × cols, rows sum to 1).

    cross_xy is x attending over y (softmax over the y axis); cross_yx the reverse.
    The cross logits QKᵀ (before the 1/√d_h softmax scale) are kept so weight
    sharing can be inspected.
    """
    self_x: Tensor
    self_y: Tensor
    cross_xy: Tensor
    cross_yx: Tensor
    logits_xy: Tensor
    logits_yx: Tensor

    def mean_self_x(self) -> Tensor:
        return ops.mean_axis0(self.self_x)

    def mean_self_y(self) -> Tensor:
        return ops.mean_axis0(self.self_y)


def attention_logits(q: Tensor, k: Tensor) -> Tensor:
    """QKᵀ per head; the 1/√d_h factor is applied by `attend` inside the softmax."""
    return ops.matmul(q, ops.transpose(k))


def attend(logits: Tensor, v: Tensor) -> Tuple[Tensor, Tensor]:
    """softmax(logits/√d_h)·V; returns (message, attention map)."""
    probs = ops.softmax_rows(logits, scale=1.0 / math.sqrt(v.shape[-1]))
    return ops.matmul(probs, v), probs


def _check_pair(x: Tensor, y: Tensor, dim: int) -> None:
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise EmptyInputError("attention needs at least one point per image")
    if x.shape[1] != dim or y.shape[1] != dim:
        raise ConfigurationError(
            f"feature dims {x.shape[1]}/{y.shape[1]} do not match layer dim {dim}")


class Projections:
    """Q, K, V linear maps (C × C each)."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 rng: Optional[np.random.Generator] = None):
        self.heads = heads
        self.q = Linear(store, f"{name}.q", dim, dim, rng)
        self.k = Linear(store, f"{name}.k", dim, dim, rng)
        self.v = Linear(store, f"{name}.v", dim, dim, rng)

    def __call__(self, x: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        return (ops.split_heads(self.q(x), self.heads),
                ops.split_heads(self.k(x), self.heads),
                ops.split_heads(self.v(x), self.heads))


class ParallelAttentionLayer:
    """
    One parallel attention layer updating both images at once.

    Sharing flags:
        share_qkv: self and cross paths use the same Q/K/V projections
        share_merge: self and cross messages use the same head-merging map
        share_attn_weights: y-side cross logits are the transposed x-side logits
        share_ffn: the x and y branches use the same fusion MLP
    """

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int = 4,
                 share_qkv: bool = True, share_merge: bool = True,
                 share_attn_weights: bool = True, share_ffn: bool = False,
                 rng: Optional[np.random.Generator] = None):
        if dim % heads:
            raise ConfigurationError(f"dim {dim} not divisible by {heads} heads")
        self.name = name
        self.dim = dim
        self.heads = heads
        self.share_qkv = share_qkv
        self.share_merge = share_merge
        self.share_attn_weights = share_attn_weights
        self.share_ffn = share_ffn

        if share_qkv:
            self.self_proj = self.cross_proj = Projections(store, f"{name}.qkv", dim, heads, rng)
        else:
            self.self_proj = Projections(store, f"{name}.self_qkv", dim, heads, rng)
            self.cross_proj = Projections(store, f"{name}.cross_qkv", dim, heads, rng)

        if share_merge:
            self.self_merge = self.cross_merge = Linear(store, f"{name}.merge", dim, dim, rng)
        else:
            self.self_merge = Linear(store, f"{name}.self_merge", dim, dim, rng)
            self.cross_merge = Linear(store, f"{name}.cross_merge", dim, dim, rng)

        if share_ffn:
            self.fusion_x = self.fusion_y = MLP(store, f"{name}.fusion", [2 * dim, 2 * dim, dim], rng)
        else:
            self.fusion_x = MLP(store, f"{name}.fusion_x", [2 * dim, 2 * dim, dim], rng)
            self.fusion_y = MLP(store, f"{name}.fusion_y", [2 * dim, 2 * dim, dim], rng)

    def __call__(self, x: Tensor, y: Tensor) -> Tuple[Tensor, Tensor, AttentionMaps]:
        _check_pair(x, y, self.dim)

        q_x, k_x, v_x = self.self_proj(x)
        q_y, k_y, v_y = self.self_proj(y)
        if self.share_qkv:
            cq_x, ck_x, cv_x = q_x, k_x, v_x
            cq_y, ck_y, cv_y = q_y, k_y, v_y
        else:
            cq_x, ck_x, cv_x = self.cross_proj(x)
            cq_y, ck_y, cv_y = self.cross_proj(y)

        self_msg_x, self_map_x = attend(attention_logits(q_x, k_x), v_x)
        self_msg_y, self_map_y = attend(attention_logits(q_y, k_y), v_y)

        logits_xy = attention_logits(cq_x, ck_y)
        if self.share_attn_weights:
            logits_yx = ops.transpose(logits_xy)
        else:
            logits_yx = attention_logits(cq_y, ck_x)
        cross_msg_x, cross_map_xy = attend(logits_xy, cv_y)
        cross_msg_y, cross_map_yx = attend(logits_yx, cv_x)

        self_out_x = self.self_merge(ops.merge_heads(self_msg_x))
        self_out_y = self.self_merge(ops.merge_heads(self_msg_y))
        cross_out_x = self.cross_merge(ops.merge_heads(cross_msg_x))
        cross_out_y = self.cross_merge(ops.merge_heads(cross_msg_y))

        x_new = ops.add(x, self.fusion_x(ops.concat([self_out_x, cross_out_x], axis=1)))
        y_new = ops.add(y, self.fusion_y(ops.concat([self_out_y, cross_out_y], axis=1)))

        maps = AttentionMaps(self_x=self_map_x, self_y=self_map_y,
                             cross_xy=cross_map_xy, cross_yx=cross_map_yx,
                             logits_xy=logits_xy, logits_yx=logits_yx)
        return x_new, y_new, maps


def parallel_layer(x: Tensor, y: Tensor, layer: ParallelAttentionLayer
                   ) -> Tuple[Tensor, Tensor, AttentionMaps]:
    return layer(x, y)


class SerialAttentionLayer:
    """Message-passing attention layer: x ← x + MLP([x, merge(MHA(x, source))])."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int = 4,
                 rng: Optional[np.random.Generator] = None):
        if dim % heads:
            raise ConfigurationError(f"dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.proj = Projections(store, f"{name}.qkv", dim, heads, rng)
        self.merge = Linear(store, f"{name}.merge", dim, dim, rng)
        self.mlp = MLP(store, f"{name}.mlp", [2 * dim, 2 * dim, dim], rng)

    def message(self, x: Tensor, source: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        """Merged message for x from source, with the attention map and raw logits."""
        heads = self.proj.heads
        q = ops.split_heads(self.proj.q(x), heads)
        k = ops.split_heads(self.proj.k(source), heads)
        v = ops.split_heads(self.proj.v(source), heads)
        logits = attention_logits(q, k)
        msg, probs = attend(logits, v)
        return self.merge(ops.merge_heads(msg)), probs, logits

    def update(self, x: Tensor, source: Tensor) -> Tuple[Tensor, Tensor]:
        msg, probs, _ = self.message(x, source)
        return ops.add(x, self.mlp(ops.concat([x, msg], axis=1))), probs


class SerialLayerPair:
    """One self layer followed by one cross layer, as in the serial baseline."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int = 4,
                 rng: Optional[np.random.Generator] = None):
        self.dim = dim
        self.self_layer = SerialAttentionLayer(store, f"{name}.self", dim, heads, rng)
        self.cross_layer = SerialAttentionLayer(store, f"{name}.cross", dim, heads, rng)

    def __call__(self, x: Tensor, y: Tensor) -> Tuple[Tensor, Tensor, AttentionMaps]:
        _check_pair(x, y, self.dim)
        x1, self_map_x = self.self_layer.update(x, x)
        y1, self_map_y = self.self_layer.update(y, y)
        # both directions read the pre-update features of the other image
        msg_x, cross_xy, logits_xy = self.cross_layer.message(x1, y1)
        msg_y, cross_yx, logits_yx = self.cross_layer.message(y1, x1)
        x2 = ops.add(x1, self.cross_layer.mlp(ops.concat([x1, msg_x], axis=1)))
        y2 = ops.add(y1, self.cross_layer.mlp(ops.concat([y1, msg_y], axis=1)))
        maps = AttentionMaps(self_x=self_map_x, self_y=self_map_y,
                             cross_xy=cross_xy, cross_yx=cross_yx,
                             logits_xy=logits_xy, logits_yx=logits_yx)
        return x2, y2, maps


def serial_layer_pair(x: Tensor, y: Tensor, pair: SerialLayerPair
                      ) -> Tuple[Tensor, Tensor, AttentionMaps]:
    return pair(x, y)
