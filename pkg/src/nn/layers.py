import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from src.models.param_store import ParamStore
from src.tensor import Tensor, ops

logger = logging.getLogger('ParaFormer')

INIT_KAIMING = 'kaiming'   # layer followed by ReLU
INIT_LINEAR = 'linear'     # layer with a linear output
INIT_ZEROS = 'zeros'


def init_weight(rng: np.random.Generator, fan_in: int, fan_out: int, scheme: str) -> np.ndarray:
    """Kaiming-uniform (gain sqrt 2) for ReLU layers, 1/sqrt(fan_in) bound for linear outputs."""
    if scheme == INIT_ZEROS:
        return np.zeros((fan_in, fan_out), dtype=np.float32)
    if scheme == INIT_KAIMING:
        bound = math.sqrt(6.0 / fan_in)
    else:
        bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)


class Linear:
    """y = x·W + b, with W stored as (in × out) and b as a 1 × out row vector."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, out_dim: int,
                 rng: Optional[np.random.Generator] = None, init: str = INIT_LINEAR,
                 bias: bool = True):
        self.store = store
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.has_bias = bias
        if rng is not None:
            store.add(f"{name}.weight", init_weight(rng, in_dim, out_dim, init))
            if bias:
                store.add(f"{name}.bias", np.zeros((1, out_dim), dtype=np.float32))
        else:
            store.require(f"{name}.weight", (in_dim, out_dim))
            if bias:
                store.require(f"{name}.bias", (1, out_dim))

    @property
    def weight(self) -> Tensor:
        return self.store[f"{self.name}.weight"]

    @property
    def bias(self) -> Tensor:
        return self.store[f"{self.name}.bias"]

    @property
    def param_names(self) -> List[str]:
        names = [f"{self.name}.weight"]
        if self.has_bias:
            names.append(f"{self.name}.bias")
        return names

    def __call__(self, x: Tensor) -> Tensor:
        out = ops.matmul(x, self.weight)
        if self.has_bias:
            out = ops.add(out, self.bias)
        return out


class MLP:
    """
    Stack of Linear layers with ReLU between them.

    `zero_last` zero-initializes the final layer so that a residual block built on
    top of it starts out as the identity.
    """

    def __init__(self, store: ParamStore, name: str, sizes: Sequence[int],
                 rng: Optional[np.random.Generator] = None, zero_last: bool = False):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least an input and an output size")
        self.sizes = list(sizes)
        self.layers: List[Linear] = []
        n = len(sizes) - 1
        for i in range(n):
            last = i == n - 1
            if last:
                scheme = INIT_ZEROS if zero_last else INIT_LINEAR
            else:
                scheme = INIT_KAIMING
            self.layers.append(Linear(store, f"{name}.{i}", sizes[i], sizes[i + 1], rng, init=scheme))

    @property
    def param_names(self) -> List[str]:
        return [p for layer in self.layers for p in layer.param_names]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.relu(x)
        return x
