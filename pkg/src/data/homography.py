import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.exceptions import ContractError, DataGenerationError

logger = logging.getLogger('ParaFormer')

MIN_ABS_DET = 1e-6


@dataclass(frozen=True)
class HomographyBounds:
    """
    Sampling ranges for random homographies.

    Rotation and scale act about the image center; translation is a fraction of
    the image size; perspective is the magnitude of the two bottom-row terms.
    """
    max_rotation_deg: float = 25.0
    min_scale: float = 0.8
    max_scale: float = 1.2
    max_translation: float = 0.1
    max_perspective: float = 1e-4
    max_retries: int = 100

    def validate(self) -> 'HomographyBounds':
        if self.max_rotation_deg < 0 or self.max_translation < 0 or self.max_perspective < 0:
            raise ContractError("homography bounds must be non-negative")
        if not 0 < self.min_scale <= self.max_scale:
            raise ContractError(f"bad scale range [{self.min_scale}, {self.max_scale}]")
        if self.max_retries < 1:
            raise ContractError("max_retries must be >= 1")
        return self

    @classmethod
    def identity(cls) -> 'HomographyBounds':
        return cls(max_rotation_deg=0.0, min_scale=1.0, max_scale=1.0,
                   max_translation=0.0, max_perspective=0.0)


@dataclass
class Homography:
    """Plane-to-plane mapping X → Y as a 3 × 3 float64 matrix normalized to h33 = 1."""
    H: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        if H.shape != (3, 3) or not np.all(np.isfinite(H)):
            raise ContractError(f"homography must be a finite 3 x 3 matrix, got {H.shape}")
        if abs(H[2, 2]) < 1e-12:
            raise ContractError("homography has h33 = 0")
        self.H = H / H[2, 2]

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.H))

    def is_invertible(self) -> bool:
        return abs(self.det) > MIN_ABS_DET

    def inverse(self) -> 'Homography':
        if not self.is_invertible():
            raise ContractError("homography is singular")
        return Homography(np.linalg.inv(self.H))

    def project(self, points: np.ndarray) -> np.ndarray:
        return project(self.H, points)

    def maps_to_convex(self, image_size: Tuple[int, int]) -> bool:
        """True when the image corners land in front of the camera as a convex quad."""
        w, h = image_size
        corners = np.array([[0, 0], [w, 0], [w, h], [0, h]], dtype=np.float64)
        homog = np.hstack([corners, np.ones((4, 1))]) @ self.H.T
        if np.any(homog[:, 2] <= 0):
            return False
        quad = homog[:, :2] / homog[:, 2:]
        edges = np.roll(quad, -1, axis=0) - quad
        nxt = np.roll(edges, -1, axis=0)
        cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
        return bool(np.all(cross > 0) or np.all(cross < 0))


def project(H: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Map K × 2 pixel coordinates through H (homogeneous divide included), in float64."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    homog = np.hstack([pts, np.ones((pts.shape[0], 1))]) @ np.asarray(H, dtype=np.float64).T
    return homog[:, :2] / homog[:, 2:]


def _compose(rng: np.random.Generator, bounds: HomographyBounds,
             image_size: Tuple[int, int]) -> np.ndarray:
    w, h = image_size
    cx, cy = w / 2.0, h / 2.0
    angle = math.radians(rng.uniform(-bounds.max_rotation_deg, bounds.max_rotation_deg))
    s = rng.uniform(bounds.min_scale, bounds.max_scale)
    tx = rng.uniform(-bounds.max_translation, bounds.max_translation) * w
    ty = rng.uniform(-bounds.max_translation, bounds.max_translation) * h
    px, py = rng.uniform(-bounds.max_perspective, bounds.max_perspective, size=2)

    to_origin = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    back = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
    similarity = np.array([[s * math.cos(angle), -s * math.sin(angle), 0],
                           [s * math.sin(angle), s * math.cos(angle), 0],
                           [0, 0, 1]], dtype=np.float64)
    perspective = np.array([[1, 0, 0], [0, 1, 0], [px, py, 1]], dtype=np.float64)
    shift = np.array([[1, 0, tx], [0, 1, ty], [0, 0, 1]], dtype=np.float64)
    return back @ shift @ perspective @ similarity @ to_origin


def random_homography(rng: np.random.Generator, bounds: HomographyBounds = HomographyBounds(),
                      image_size: Tuple[int, int] = (640, 480)) -> Homography:
    """
    Draw a homography from `bounds`, resampling degenerate draws.

    Raises:
        DataGenerationError: no valid draw within bounds.max_retries attempts
    """
    bounds.validate()
    for attempt in range(bounds.max_retries):
        candidate = Homography(_compose(rng, bounds, image_size))
        if candidate.is_invertible() and candidate.maps_to_convex(image_size):
            return candidate
        logger.debug(f"Rejected degenerate homography draw {attempt}")
    raise DataGenerationError(f"No valid homography after {bounds.max_retries} draws")
