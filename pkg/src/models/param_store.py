import logging
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import ConfigurationError, IncompatibleCheckpointError
from src.tensor import Tensor
from src.utils import blobfile

logger = logging.getLogger('ParaFormer')

CHECKPOINT_KIND = 'paraformer-weights'


class ParamStore:
    """
    Ordered map from dotted parameter names to leaf tensors.

    Modules never hold tensors themselves; they keep names and look them up here at
    call time, so swapping in a loaded store (or a float64 copy for gradient
    checks) is enough to change the weights a model runs with.
    """

    def __init__(self, config_hash: str = ''):
        self._tensors: 'OrderedDict[str, Tensor]' = OrderedDict()
        self.config_hash = config_hash
        self.claimed = set()

    def add(self, name: str, values: np.ndarray, requires_grad: bool = True) -> Tensor:
        if name in self._tensors:
            raise ConfigurationError(f"Duplicate parameter name: {name}")
        tensor = Tensor(values, requires_grad=requires_grad)
        self._tensors[name] = tensor
        self.claimed.add(name)
        return tensor

    def require(self, name: str, shape: Sequence[int]) -> Tensor:
        """Return an existing parameter, checking that its shape is what the module expects."""
        if name not in self._tensors:
            raise IncompatibleCheckpointError(f"Missing parameter: {name}")
        tensor = self._tensors[name]
        if tuple(tensor.shape) != tuple(shape):
            raise IncompatibleCheckpointError(
                f"Parameter {name} has shape {tensor.shape}, expected {tuple(shape)}")
        self.claimed.add(name)
        return tensor

    def unclaimed(self) -> List[str]:
        """Names no module has asked for (leftovers of another architecture)."""
        return [n for n in self._tensors if n not in self.claimed]

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self) -> List[Tuple[str, Tensor]]:
        return list(self._tensors.items())

    def names(self) -> List[str]:
        return list(self._tensors)

    def tensors(self) -> List[Tensor]:
        return list(self._tensors.values())

    def trainable(self) -> List[Tuple[str, Tensor]]:
        return [(n, t) for n, t in self._tensors.items() if t.requires_grad]

    def count(self) -> int:
        """Total number of scalar parameters."""
        return int(sum(t.size for t in self._tensors.values()))

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def freeze(self, prefix: str) -> None:
        for name, t in self._tensors.items():
            if name.startswith(prefix):
                t.requires_grad = False

    def fill(self, prefix: str, value: float = 0.0) -> None:
        """Overwrite every parameter whose name starts with `prefix` with a constant."""
        for name, t in self._tensors.items():
            if name.startswith(prefix):
                t.data = np.full_like(t.data, value)

    def perturb(self, rng: np.random.Generator, scale: float = 0.1) -> None:
        """Add uniform noise everywhere, so zero-initialized layers stop masking gradients."""
        for t in self._tensors.values():
            t.data = (t.data + rng.uniform(-scale, scale, size=t.shape)).astype(t.dtype)

    def astype(self, dtype) -> 'ParamStore':
        """Copy into a new store with every tensor cast to `dtype`."""
        out = ParamStore(self.config_hash)
        for name, t in self._tensors.items():
            out._tensors[name] = Tensor(t.data, requires_grad=t.requires_grad, dtype=dtype)
        return out

    def copy(self) -> 'ParamStore':
        return self.astype(np.float32)

    def state(self) -> Dict[str, np.ndarray]:
        return OrderedDict((n, t.data.copy()) for n, t in self._tensors.items())

    def manifest(self) -> Dict[str, object]:
        return {
            'kind': CHECKPOINT_KIND,
            'config_hash': self.config_hash,
            'shapes': {n: list(t.shape) for n, t in self._tensors.items()},
            'dtype': 'f32',
            'param_count': self.count(),
        }

    def save(self, path: str, extra: Optional[Dict[str, np.ndarray]] = None,
             meta: Optional[Dict[str, object]] = None) -> str:
        """
        Write the store as a manifest + float32 blob; returns the file's SHA-256.

        `extra` entries (optimizer moments, for instance) are stored after the
        parameters under their own names.
        """
        entries: 'OrderedDict[str, np.ndarray]' = OrderedDict(
            (n, t.data.astype(np.float32)) for n, t in self._tensors.items())
        for name, arr in (extra or {}).items():
            entries[name] = np.asarray(arr, dtype=np.float32)
        file_meta = {'kind': CHECKPOINT_KIND, 'config_hash': self.config_hash,
                     'param_names': list(self._tensors), 'param_count': self.count()}
        file_meta.update(meta or {})
        digest = blobfile.save(path, entries, file_meta)
        logger.info(f"Saved {len(self)} parameter tensors ({self.count()} values) to {path}")
        return digest

    @classmethod
    def load(cls, path: str, expected_hash: Optional[str] = None
             ) -> Tuple['ParamStore', Dict[str, np.ndarray], Dict[str, object]]:
        """
        Read a checkpoint, refusing it when it was written for another architecture.

        Returns:
            (store, extra entries, metadata); nothing is returned on any error
        """
        entries, meta = blobfile.load(path)
        if meta.get('kind') != CHECKPOINT_KIND:
            raise IncompatibleCheckpointError(f"{path} is not a weight file")
        if expected_hash is not None and meta.get('config_hash') != expected_hash:
            raise IncompatibleCheckpointError(
                f"Checkpoint config hash {meta.get('config_hash')} does not match {expected_hash}")
        names = meta.get('param_names', [])
        store = cls(meta.get('config_hash', ''))
        for name in names:
            if name not in entries:
                raise IncompatibleCheckpointError(f"Checkpoint lacks tensor {name}")
            arr = entries[name]
            if arr.dtype != np.float32:
                raise IncompatibleCheckpointError(f"Tensor {name} is not float32")
            store._tensors[name] = Tensor(arr, requires_grad=True)
        extra = OrderedDict((n, a) for n, a in entries.items() if n not in store._tensors)
        return store, extra, meta
