"""
Differentiable operations over `Tensor`.

Every function validates shapes, computes the forward result with numpy and
returns a tensor carrying its backward closure. Reductions (matmul dot products,
softmax denominators, log-sum-exp, sums) accumulate in float64 and round once to
the working dtype. Broadcasting is limited to operands of equal rank whose
differing axes have size 1; anything else needs an explicit `expand`.
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from src.exceptions import ContractError, DimensionError, TensorIndexError
from src.tensor.tensor import Tensor

ACCUM_DTYPE = np.float64


def _result_dtype(*tensors: Tensor):
    return np.result_type(*(t.data.dtype for t in tensors))


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    if a.ndim != b.ndim:
        raise DimensionError(f"{op}: rank mismatch {a.shape} vs {b.shape}")
    out = []
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{op}: incompatible shapes {a.shape} vs {b.shape}")
        out.append(max(da, db))
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return np.sum(g, axis=axes, keepdims=True, dtype=ACCUM_DTYPE).astype(g.dtype)


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def _matmul64(a: np.ndarray, b: np.ndarray, dtype) -> np.ndarray:
    return np.matmul(a.astype(ACCUM_DTYPE), b.astype(ACCUM_DTYPE)).astype(dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of m×k and k×n, or a batch of them when both are 3-D."""
    if a.ndim not in (2, 3) or a.ndim != b.ndim:
        raise DimensionError(f"matmul: unsupported ranks {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dims differ {a.shape} @ {b.shape}")
    if a.ndim == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"matmul: batch dims differ {a.shape} @ {b.shape}")
    dtype = _result_dtype(a, b)
    out = _matmul64(a.data, b.data, dtype)

    def _backward(g):
        ga = _matmul64(g, _swap(b.data), dtype) if a.requires_grad else None
        gb = _matmul64(_swap(a.data), g, dtype) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(out, (a, b), _backward, 'matmul')


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes; the result is a view of the same buffer."""
    if a.ndim < 2:
        raise DimensionError(f"transpose: need rank >= 2, got {a.shape}")

    def _backward(g):
        return (_swap(g),)

    return Tensor.from_op(_swap(a.data), (a,), _backward, 'transpose')


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, 'add')
    out = (a.data + b.data).astype(_result_dtype(a, b), copy=False)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(out, (a, b), _backward, 'add')


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, 'sub')
    out = (a.data - b.data).astype(_result_dtype(a, b), copy=False)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(out, (a, b), _backward, 'sub')


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise (Hadamard) product."""
    _check_broadcast(a, b, 'mul')
    out = (a.data * b.data).astype(_result_dtype(a, b), copy=False)

    def _backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(out, (a, b), _backward, 'mul')


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a constant."""
    out = (a.data * factor).astype(a.dtype, copy=False)

    def _backward(g):
        return ((g * factor).astype(a.dtype, copy=False),)

    return Tensor.from_op(out, (a,), _backward, 'scale')


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicitly repeat size-1 axes up to `shape`."""
    shape = tuple(shape)
    if len(shape) != a.ndim or any(s != d and d != 1 for s, d in zip(shape, a.shape)):
        raise DimensionError(f"expand: cannot expand {a.shape} to {shape}")
    out = np.broadcast_to(a.data, shape).copy()

    def _backward(g):
        return (_unbroadcast(g, a.shape),)

    return Tensor.from_op(out, (a,), _backward, 'expand')


def sigmoid(a: Tensor) -> Tensor:
    out = (1.0 / (1.0 + np.exp(-a.data))).astype(a.dtype, copy=False)

    def _backward(g):
        return (g * out * (1.0 - out),)

    return Tensor.from_op(out, (a,), _backward, 'sigmoid')


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, 0).astype(a.dtype, copy=False)

    def _backward(g):
        return (g * mask,)

    return Tensor.from_op(out, (a,), _backward, 'relu')


def sin(a: Tensor) -> Tensor:
    def _backward(g):
        return (g * np.cos(a.data),)

    return Tensor.from_op(np.sin(a.data), (a,), _backward, 'sin')


def cos(a: Tensor) -> Tensor:
    def _backward(g):
        return (-g * np.sin(a.data),)

    return Tensor.from_op(np.cos(a.data), (a,), _backward, 'cos')


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along an axis; written [a, b] in the model equations."""
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat: nothing to concatenate")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
                s != r for i, (s, r) in enumerate(zip(t.shape, tensors[0].shape)) if i != axis):
            raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    dtype = _result_dtype(*tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis).astype(dtype, copy=False)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return Tensor.from_op(out, tensors, _backward, 'concat')


def _as_index(idx, limit: int, op: str) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= limit):
        raise TensorIndexError(f"{op}: index out of range for {limit} rows")
    return idx


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows by index. Indices are constants; gradients flow to the picked rows."""
    if a.ndim != 2:
        raise DimensionError(f"gather_rows: need a 2-D tensor, got {a.shape}")
    idx = _as_index(idx, a.shape[0], 'gather_rows')
    out = a.data[idx]

    def _backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return Tensor.from_op(out, (a,), _backward, 'gather_rows')


def scatter_rows(a: Tensor, idx, n_total: int) -> Tensor:
    """Place row i of `a` at row idx[i] of an n_total-row zero matrix."""
    if a.ndim != 2:
        raise DimensionError(f"scatter_rows: need a 2-D tensor, got {a.shape}")
    idx = _as_index(idx, n_total, 'scatter_rows')
    if idx.size != a.shape[0]:
        raise DimensionError(f"scatter_rows: {idx.size} indices for {a.shape[0]} rows")
    if np.unique(idx).size != idx.size:
        raise ContractError("scatter_rows: duplicate target rows")
    out = np.zeros((n_total, a.shape[1]), dtype=a.dtype)
    out[idx] = a.data

    def _backward(g):
        return (g[idx],)

    return Tensor.from_op(out, (a,), _backward, 'scatter_rows')


def gather_elements(a: Tensor, rows, cols) -> Tensor:
    """Pick a[rows[k], cols[k]] into a 1×K row vector."""
    if a.ndim != 2:
        raise DimensionError(f"gather_elements: need a 2-D tensor, got {a.shape}")
    rows = _as_index(rows, a.shape[0], 'gather_elements')
    cols = _as_index(cols, a.shape[1], 'gather_elements')
    if rows.size != cols.size:
        raise DimensionError("gather_elements: rows and cols differ in length")
    out = a.data[rows, cols].reshape(1, -1)

    def _backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, cols), g.reshape(-1))
        return (ga,)

    return Tensor.from_op(out, (a,), _backward, 'gather_elements')


def reduce_sum(a: Tensor, axis: Optional[int] = None) -> Tensor:
    """Sum along one axis (kept as size 1) or over everything into a 1×…×1 scalar."""
    if axis is None:
        out = np.sum(a.data, dtype=ACCUM_DTYPE).astype(a.dtype).reshape((1,) * a.ndim)
    else:
        out = np.sum(a.data, axis=axis, keepdims=True, dtype=ACCUM_DTYPE).astype(a.dtype)

    def _backward(g):
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return Tensor.from_op(out, (a,), _backward, 'reduce_sum')


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"reshape: {a.shape} -> {shape}: {e}") from e

    def _backward(g):
        return (g.reshape(a.shape),)

    return Tensor.from_op(out, (a,), _backward, 'reshape')


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"permute: bad axes {axes} for rank {a.ndim}")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.data, axes))

    def _backward(g):
        return (np.transpose(g, inverse),)

    return Tensor.from_op(out, (a,), _backward, 'permute')


def softmax(a: Tensor, axis: int = -1, scale: float = 1.0) -> Tensor:
    """Numerically stable softmax of `scale * a` along `axis` (max subtracted first)."""
    z = a.data.astype(ACCUM_DTYPE) * scale
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    out = (e / np.sum(e, axis=axis, keepdims=True)).astype(a.dtype)

    def _backward(g):
        g64 = g.astype(ACCUM_DTYPE)
        y64 = out.astype(ACCUM_DTYPE)
        dot = np.sum(g64 * y64, axis=axis, keepdims=True)
        return ((y64 * (g64 - dot) * scale).astype(a.dtype),)

    return Tensor.from_op(out, (a,), _backward, 'softmax')


def softmax_rows(a: Tensor, scale: float = 1.0) -> Tensor:
    """Row-wise softmax of a 2-D (or per-head 3-D) tensor; every row sums to 1."""
    return softmax(a, axis=-1, scale=scale)


def logsumexp(a: Tensor, axis: int) -> Tensor:
    """log(sum(exp(a))) along `axis`, kept as size 1."""
    a64 = a.data.astype(ACCUM_DTYPE)
    m = np.max(a64, axis=axis, keepdims=True)
    out64 = m + np.log(np.sum(np.exp(a64 - m), axis=axis, keepdims=True))
    out = out64.astype(a.dtype)

    def _backward(g):
        weights = np.exp(a64 - out64)
        return ((g.astype(ACCUM_DTYPE) * weights).astype(a.dtype),)

    return Tensor.from_op(out, (a,), _backward, 'logsumexp')


def l2_normalize(a: Tensor) -> Tensor:
    """a / ‖a‖ over every entry (Frobenius norm)."""
    a64 = a.data.astype(ACCUM_DTYPE)
    norm = float(np.sqrt(np.sum(a64 * a64)))
    if norm == 0.0:
        raise ContractError("l2_normalize: zero-norm tensor")
    u64 = a64 / norm
    out = u64.astype(a.dtype)

    def _backward(g):
        g64 = g.astype(ACCUM_DTYPE)
        return (((g64 - u64 * np.sum(g64 * u64)) / norm).astype(a.dtype),)

    return Tensor.from_op(out, (a,), _backward, 'l2_normalize')


def mean_axis0(a: Tensor) -> Tensor:
    """Average a stack of maps (h × m × n) into one m × n map."""
    if a.ndim != 3:
        raise DimensionError(f"mean_axis0: need a 3-D tensor, got {a.shape}")
    summed = reduce_sum(a, axis=0)
    return reshape(scale(summed, 1.0 / a.shape[0]), a.shape[1:])


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(n × C) -> (heads × n × C/heads)."""
    n, c = x.shape
    if c % heads:
        raise DimensionError(f"split_heads: {c} channels not divisible by {heads} heads")
    return permute(reshape(x, (n, heads, c // heads)), (1, 0, 2))


def merge_heads(x: Tensor) -> Tensor:
    """(heads × n × d) -> (n × heads·d)."""
    h, n, d = x.shape
    return reshape(permute(x, (1, 0, 2)), (n, h * d))


def as_tensor(values, dtype=None) -> Tensor:
    """Constant (non-differentiable) tensor."""
    if isinstance(values, Tensor):
        return values
    return Tensor(values, requires_grad=False, dtype=dtype)

