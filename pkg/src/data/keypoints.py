from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.exceptions import ContractError, EmptyInputError

UNIT_NORM_TOLERANCE = 1e-5


@dataclass
class KeypointSet:
    """
    Keypoints of one image: the network input.

    positions: M × 3 (x px, y px, detection score in [0, 1])
    descriptors: M × C, L2-normalized rows
    image_size: (width px, height px)
    """
    positions: np.ndarray
    descriptors: np.ndarray
    image_size: Tuple[int, int]

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float32)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float32)
        self.image_size = (int(self.image_size[0]), int(self.image_size[1]))

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def descriptor_dim(self) -> int:
        return int(self.descriptors.shape[1])

    def validate(self) -> 'KeypointSet':
        m = len(self)
        if m == 0:
            raise EmptyInputError("Keypoint set is empty")
        if self.positions.shape != (m, 3):
            raise ContractError(f"positions must be M x 3, got {self.positions.shape}")
        if self.descriptors.ndim != 2 or self.descriptors.shape[0] != m:
            raise ContractError(f"descriptors must be M x C, got {self.descriptors.shape}")
        w, h = self.image_size
        x, y, score = self.positions[:, 0], self.positions[:, 1], self.positions[:, 2]
        if np.any(x < 0) or np.any(x >= w) or np.any(y < 0) or np.any(y >= h):
            raise ContractError("keypoint outside the image frame")
        if np.any(score < 0) or np.any(score > 1):
            raise ContractError("detection score outside [0, 1]")
        norms = np.linalg.norm(self.descriptors.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
            raise ContractError("descriptors must be L2-normalized")
        return self

    def permuted(self, perm: np.ndarray) -> 'KeypointSet':
        return KeypointSet(self.positions[perm], self.descriptors[perm], self.image_size)


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Scale rows to unit L2 norm (norm computed in float64)."""
    x64 = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x64, axis=1, keepdims=True)
    return (x64 / np.maximum(norms, 1e-12)).astype(np.float32)
