import logging
import math
from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import ConfigurationError, IncompatibleCheckpointError, NumericError
from src.tensor import Tensor

logger = logging.getLogger('ParaFormer')

NO_DECAY_SUFFIXES = ('.bias', '.bin_score')


def lr_schedule(step: int, total_steps: int, warmup_steps: int, base_lr: float,
                min_lr: float = 0.0) -> float:
    """
    Learning rate at `step` (0-based): linear warm-up to base_lr, then cosine decay to min_lr.

    The first step uses base_lr/warmup_steps rather than 0 so that no step is wasted.
    """
    if total_steps <= 0:
        return base_lr
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    decay_steps = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / decay_steps)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """
    Adam with decoupled weight decay.

    Moments are kept in the parameter dtype so that saving them with the weights
    and resuming reproduces the uninterrupted run exactly.
    """

    def __init__(self, params: Sequence[Tuple[str, Tensor]], lr: float = 1e-4,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01, grad_clip: Optional[float] = None):
        if lr <= 0:
            raise ConfigurationError("lr must be positive")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ConfigurationError(f"betas must lie in [0, 1), got {betas}")
        if weight_decay < 0:
            raise ConfigurationError("weight_decay must be non-negative")
        self.params: List[Tuple[str, Tensor]] = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.t = 0
        self.m: Dict[str, np.ndarray] = OrderedDict((n, np.zeros_like(p.data)) for n, p in self.params)
        self.v: Dict[str, np.ndarray] = OrderedDict((n, np.zeros_like(p.data)) for n, p in self.params)

    def grad_norm(self) -> float:
        total = 0.0
        for _, p in self.params:
            if p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        return math.sqrt(total)

    def step(self, lr: Optional[float] = None) -> float:
        """
        Apply one update from the accumulated gradients.

        Returns:
            Global gradient norm before clipping

        Raises:
            NumericError: a gradient is NaN/Inf
        """
        lr = self.lr if lr is None else lr
        norm = self.grad_norm()
        if not math.isfinite(norm):
            raise NumericError("non-finite gradient norm")
        clip = 1.0
        if self.grad_clip is not None and norm > self.grad_clip:
            clip = self.grad_clip / (norm + 1e-12)

        self.t += 1
        b1, b2 = self.betas
        correction1 = 1.0 - b1 ** self.t
        correction2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64) * clip
            data = p.data.astype(np.float64)
            if self.weight_decay and not name.endswith(NO_DECAY_SUFFIXES):
                data = data - lr * self.weight_decay * data
            m = b1 * self.m[name].astype(np.float64) + (1.0 - b1) * g
            v = b2 * self.v[name].astype(np.float64) + (1.0 - b2) * g * g
            self.m[name] = m.astype(p.dtype)
            self.v[name] = v.astype(p.dtype)
            data = data - lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            p.data = data.astype(p.dtype)
        return norm

    def state(self) -> 'OrderedDict[str, np.ndarray]':
        out: 'OrderedDict[str, np.ndarray]' = OrderedDict()
        for name in self.m:
            out[f"optim.m.{name}"] = self.m[name]
            out[f"optim.v.{name}"] = self.v[name]
        return out

    def load_state(self, state: Dict[str, np.ndarray], t: int) -> None:
        for name, p in self.params:
            try:
                m, v = state[f"optim.m.{name}"], state[f"optim.v.{name}"]
            except KeyError as e:
                raise IncompatibleCheckpointError(f"Optimizer state lacks {e}") from e
            if m.shape != p.shape or v.shape != p.shape:
                raise IncompatibleCheckpointError(f"Optimizer state for {name} has the wrong shape")
            self.m[name] = m.astype(p.dtype)
            self.v[name] = v.astype(p.dtype)
        self.t = int(t)
