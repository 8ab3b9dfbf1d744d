import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from src.tensor import ops
from src.tensor.tensor import Tensor, backward

logger = logging.getLogger('ParaFormer')

DEFAULT_EPS = 1e-3
DEFAULT_TOLERANCE = 1e-4
# gradients that are exactly zero (a key bias under softmax) leave only rounding noise
DEFAULT_ATOL = 1e-7
ERROR_FLOOR = 1e-8


@dataclass
class GradCheckResult:
    """Outcome of comparing one tensor's analytic gradient with central differences."""
    name: str
    max_rel_error: float
    max_abs_error: float
    entries_checked: int
    passed: bool


def _scale(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return max(float(np.max(np.abs(analytic))) if analytic.size else 0.0,
               float(np.max(np.abs(numeric))) if numeric.size else 0.0)


def absolute_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute difference, relative to the larger of the two gradient magnitudes."""
    return absolute_error(analytic, numeric) / max(_scale(analytic, numeric), ERROR_FLOOR)


def gradients_agree(analytic: np.ndarray, numeric: np.ndarray, tolerance: float = DEFAULT_TOLERANCE,
                    atol: float = DEFAULT_ATOL) -> bool:
    """max|analytic - numeric| <= tolerance * max(|analytic|, |numeric|) + atol."""
    return absolute_error(analytic, numeric) <= tolerance * _scale(analytic, numeric) + atol


def _evaluate(fn: Callable[[], Tensor]) -> float:
    out = fn()
    return float(np.sum(out.data, dtype=np.float64))


def numerical_gradient(fn: Callable[[], Tensor], target: Tensor, eps: float = DEFAULT_EPS,
                       entries: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Central finite differences of sum(fn()) with respect to `target`.

    Args:
        fn: Re-runs the forward pass from scratch and returns its output
        target: Leaf whose data is perturbed in place (restored afterwards)
        eps: Perturbation size
        entries: Flat indices to perturb; all entries when None

    Returns:
        Array shaped like target; entries not perturbed are left at zero
    """
    grad = np.zeros(target.shape, dtype=np.float64)
    flat = target.data.reshape(-1)
    flat_grad = grad.reshape(-1)
    indices = np.arange(flat.size) if entries is None else entries
    for i in indices:
        original = flat[i]
        flat[i] = original + eps
        plus = _evaluate(fn)
        flat[i] = original - eps
        minus = _evaluate(fn)
        flat[i] = original
        flat_grad[i] = (plus - minus) / (2.0 * eps)
    return grad


def check_gradients(fn: Callable[[], Tensor], tensors: Dict[str, Tensor],
                    eps: float = DEFAULT_EPS, tolerance: float = DEFAULT_TOLERANCE,
                    atol: float = DEFAULT_ATOL, max_entries: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> List[GradCheckResult]:
    """
    Compare backward() gradients of sum(fn()) against central differences.

    Gradients are taken with respect to every tensor in `tensors`; they should be
    float64 leaves with requires_grad set. When `max_entries` is given, that many
    randomly chosen entries per tensor are checked instead of all of them.
    """
    for t in tensors.values():
        t.zero_grad()
    out = fn()
    backward(ops.reduce_sum(out) if out.size != 1 else out)

    rng = rng or np.random.default_rng(0)
    results = []
    for name, t in tensors.items():
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64)
        if max_entries is not None and t.size > max_entries:
            entries = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        else:
            entries = np.arange(t.size)
        numeric = numerical_gradient(fn, t, eps=eps, entries=entries)
        a, n = analytic.reshape(-1)[entries], numeric.reshape(-1)[entries]
        err = relative_error(a, n)
        passed = gradients_agree(a, n, tolerance, atol)
        if not passed:
            logger.warning(f"Gradient check failed for {name}: rel err {err:.3e}, "
                           f"abs err {absolute_error(a, n):.3e}")
        results.append(GradCheckResult(name=name, max_rel_error=err, max_abs_error=absolute_error(a, n),
                                       entries_checked=int(len(entries)), passed=passed))
    return results
