"""
Minimal dense tensors with reverse-mode differentiation.
"""

from .tensor import Tensor, Tape, backward, zero_grad, DEFAULT_DTYPE
from . import ops
from .gradcheck import check_gradients, gradients_agree, numerical_gradient, relative_error, GradCheckResult

__all__ = [
    'Tensor',
    'Tape',
    'backward',
    'zero_grad',
    'DEFAULT_DTYPE',
    'ops',
    'check_gradients',
    'gradients_agree',
    'numerical_gradient',
    'relative_error',
    'GradCheckResult',
]
