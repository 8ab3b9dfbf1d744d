"""
Position encoders: Wave-PE and the MLP-PE baseline.

Wave-PE treats the descriptor as a wave amplitude and the keypoint position as
its phase, unfolds the wave into real and imaginary parts with the Euler
expansion, and fuses both parts back into the descriptor with a residual:

    A_j   = MLP_A(d_j)
    θ_j   = MLP_θ(p̂_j)
    x⁰_j  = d_j + MLP_F([A_j ⊙ cos θ_j, A_j ⊙ sin θ_j])
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.exceptions import ConfigurationError
from src.models.param_store import ParamStore
from src.nn.layers import MLP
from src.tensor import Tensor, ops

logger = logging.getLogger('ParaFormer')

MLP_PE_HIDDEN = (32, 64, 128)


@dataclass
class WaveComponents:
    """Intermediates of one Wave-PE evaluation, kept for inspection and tests."""
    amplitude: Tensor
    phase: Tensor
    real: Tensor
    imag: Tensor
    encoded: Tensor


def normalize_positions(positions: np.ndarray, image_size: Tuple[int, int]) -> np.ndarray:
    """
    Center and scale-normalize (x, y) by the longer image side; the score channel passes through.

    Returns an M × 3 array: ((x − w/2)/max(w,h), (y − h/2)/max(w,h), score).
    """
    w, h = image_size
    s = float(max(w, h))
    out = np.array(positions, dtype=np.float64, copy=True)
    out[:, 0] = (out[:, 0] - w / 2.0) / s
    out[:, 1] = (out[:, 1] - h / 2.0) / s
    return out


def _check_descriptors(descriptors: Tensor, dim: int) -> None:
    if descriptors.ndim != 2 or descriptors.shape[1] != dim:
        raise ConfigurationError(
            f"Descriptor dim {descriptors.shape[-1]} does not match encoder dim {dim}")


class WavePositionEncoder:
    """Wave-PE with three two-layer MLPs; MLP_F ends zero-initialized so x⁰ = d at start."""

    def __init__(self, store: ParamStore, name: str, dim: int,
                 rng: Optional[np.random.Generator] = None):
        self.dim = dim
        self.mlp_amplitude = MLP(store, f"{name}.amplitude", [dim, dim, dim], rng)
        self.mlp_phase = MLP(store, f"{name}.phase", [3, dim, dim], rng)
        self.mlp_fuse = MLP(store, f"{name}.fuse", [2 * dim, 2 * dim, dim], rng, zero_last=True)

    def components(self, descriptors: Tensor, positions: Tensor) -> WaveComponents:
        _check_descriptors(descriptors, self.dim)
        amplitude = self.mlp_amplitude(descriptors)
        phase = self.mlp_phase(positions)
        real = ops.mul(amplitude, ops.cos(phase))
        imag = ops.mul(amplitude, ops.sin(phase))
        fused = self.mlp_fuse(ops.concat([real, imag], axis=1))
        return WaveComponents(amplitude=amplitude, phase=phase, real=real, imag=imag,
                              encoded=ops.add(descriptors, fused))

    def __call__(self, descriptors: Tensor, positions: Tensor) -> Tensor:
        return self.components(descriptors, positions).encoded


class MLPPositionEncoder:
    """Baseline encoder: x⁰ = d + MLP(p̂) with a 3→32→64→128→C network, last layer zeroed."""

    def __init__(self, store: ParamStore, name: str, dim: int,
                 rng: Optional[np.random.Generator] = None):
        self.dim = dim
        self.mlp = MLP(store, name, [3, *MLP_PE_HIDDEN, dim], rng, zero_last=True)

    def __call__(self, descriptors: Tensor, positions: Tensor) -> Tensor:
        _check_descriptors(descriptors, self.dim)
        return ops.add(descriptors, self.mlp(positions))


class IdentityPositionEncoder:
    """No position information: x⁰ = d."""

    def __init__(self, dim: int):
        self.dim = dim

    def __call__(self, descriptors: Tensor, positions: Tensor) -> Tensor:
        _check_descriptors(descriptors, self.dim)
        return descriptors


def build_position_encoder(kind: str, store: ParamStore, dim: int,
                           rng: Optional[np.random.Generator] = None):
    if kind == 'wave':
        return WavePositionEncoder(store, 'pe', dim, rng)
    if kind == 'mlp':
        return MLPPositionEncoder(store, 'pe', dim, rng)
    if kind == 'none':
        return IdentityPositionEncoder(dim)
    raise ConfigurationError(f"Unknown position encoder: {kind}")


def keypoint_inputs(kp, dtype=np.float32) -> Tuple[Tensor, Tensor]:
    """Descriptor and normalized-position tensors for a KeypointSet."""
    descriptors = Tensor(kp.descriptors, dtype=dtype)
    positions = Tensor(normalize_positions(kp.positions, kp.image_size), dtype=dtype)
    return descriptors, positions


def wave_encode(kp, encoder: WavePositionEncoder, dtype=np.float32) -> Tensor:
    """x⁰ for one image with Wave-PE."""
    return encoder(*keypoint_inputs(kp, dtype))


def mlp_encode(kp, encoder: MLPPositionEncoder, dtype=np.float32) -> Tensor:
    """x⁰ for one image with the MLP-PE baseline."""
    return encoder(*keypoint_inputs(kp, dtype))
