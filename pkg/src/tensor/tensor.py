import logging
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.exceptions import ContractError, NumericError

logger = logging.getLogger('ParaFormer')

DEFAULT_DTYPE = np.float32

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """
    Dense 2-D/3-D array with an optional gradient and a link to the op that made it.

    Leaves are created directly; every other tensor is produced by a function in
    `src.tensor.ops` and remembers its parents plus a backward closure, but only
    when at least one parent requires a gradient. Data is never mutated by ops.
    """

    __slots__ = ('data', 'requires_grad', 'grad', 'op', '_parents', '_backward', '_consumed')

    def __init__(self, data: Union[np.ndarray, float, Sequence], requires_grad: bool = False,
                 dtype=None):
        """
        Create a leaf tensor.

        Args:
            data: Array-like values; copied into a contiguous array
            requires_grad: Whether backward() should populate .grad for this leaf
            dtype: Storage dtype (default float32; float64 is used by gradient checks)
        """
        self.data = np.array(data, dtype=DEFAULT_DTYPE if dtype is None else dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op = 'leaf'
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._consumed = False

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence['Tensor'], backward: BackwardFn,
                op: str) -> 'Tensor':
        """Wrap an op result, recording the graph edge when a gradient is needed."""
        if not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite values produced by {op}")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out._consumed = False
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self.op == 'leaf'

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> 'Tensor':
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar, resolved lazily to keep ops.py the single implementation
    def __add__(self, other):
        from src.tensor import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from src.tensor import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from src.tensor import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from src.tensor import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from src.tensor import ops
        return ops.matmul(self, other)


class Tape:
    """
    Ordered record of the ops reachable from a scalar root.

    Built by a topological sort at backward time, so every op's inputs precede
    it. Each graph owns its own tape; nothing is shared between tapes, which
    keeps independent image pairs safe to run on separate threads.
    """

    def __init__(self, root: Tensor):
        if root.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
        if root._consumed:
            raise ContractError("backward already ran on this graph; rebuild the forward pass")
        self.root = root
        self.nodes: List[Tensor] = self._toposort(root)

    @staticmethod
    def _toposort(root: Tensor) -> List[Tensor]:
        order: List[Tensor] = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def run(self) -> None:
        """Propagate d(root)/d(node) from the root to every requires_grad leaf."""
        grads = {id(self.root): np.ones_like(self.root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad and node.is_leaf:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=parent.data.dtype)
                if pg.shape != parent.shape:
                    raise ContractError(
                        f"gradient shape {pg.shape} does not match {parent.shape} in {node.op}")
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        self._release()

    def _release(self) -> None:
        for node in self.nodes:
            if not node.is_leaf:
                node._parents = ()
                node._backward = None
                node._consumed = True


def backward(root: Tensor) -> None:
    """Populate .grad of every requires_grad leaf that the scalar root depends on."""
    Tape(root).run()


def zero_grad(tensors) -> None:
    for t in tensors:
        t.zero_grad()
