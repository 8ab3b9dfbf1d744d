"""
Synthetic image pairs with exact ground truth.

Keypoints are sampled uniformly in image X, each with a latent unit descriptor.
A random homography maps them into image Y; points that leave the frame lose
their partner, Y receives extra distractor points, and Y descriptors are the
latent vectors plus Gaussian noise, renormalized.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from src.data.homography import Homography, HomographyBounds, random_homography
from src.data.keypoints import KeypointSet, normalize_rows
from src.exceptions import ContractError, DataGenerationError

logger = logging.getLogger('ParaFormer')

DEFAULT_IMAGE_SIZE = (640, 480)
GT_THRESHOLD = 3.0
MIN_CORRESPONDENCES = 4


@dataclass
class PairSample:
    """
    One training/evaluation pair.

    gt_matches is K × 2 (i in X, j in Y); every X index appears either there or in
    gt_unmatched_x, and likewise for Y.
    """
    kp_x: KeypointSet
    kp_y: KeypointSet
    homography: Homography
    gt_matches: np.ndarray
    gt_unmatched_x: np.ndarray
    gt_unmatched_y: np.ndarray

    def __post_init__(self):
        self.gt_matches = np.asarray(self.gt_matches, dtype=np.int64).reshape(-1, 2)
        self.gt_unmatched_x = np.asarray(self.gt_unmatched_x, dtype=np.int64).reshape(-1)
        self.gt_unmatched_y = np.asarray(self.gt_unmatched_y, dtype=np.int64).reshape(-1)

    @property
    def H(self) -> np.ndarray:
        return self.homography.H

    def reprojection_errors(self) -> np.ndarray:
        """Pixel distance between H·x_i and y_j for every ground-truth match."""
        if self.gt_matches.shape[0] == 0:
            return np.zeros(0)
        src = self.kp_x.positions[self.gt_matches[:, 0], :2]
        dst = self.kp_y.positions[self.gt_matches[:, 1], :2].astype(np.float64)
        return np.linalg.norm(self.homography.project(src) - dst, axis=1)

    def validate(self, gt_threshold: float = GT_THRESHOLD) -> 'PairSample':
        for name, labelled, unmatched, count in (
                ('X', self.gt_matches[:, 0], self.gt_unmatched_x, len(self.kp_x)),
                ('Y', self.gt_matches[:, 1], self.gt_unmatched_y, len(self.kp_y))):
            every = np.concatenate([labelled, unmatched])
            if every.size != count or not np.array_equal(np.sort(every), np.arange(count)):
                raise ContractError(f"labels of image {name} do not partition its {count} points")
        errors = self.reprojection_errors()
        if errors.size and errors.max() >= gt_threshold:
            raise ContractError(f"ground-truth match off by {errors.max():.2f} px")
        return self


@dataclass
class PairSettings:
    """Generation knobs for make_pair / the gen-data command."""
    n_keypoints: int = 64
    descriptor_dim: int = 256
    noise: float = 0.1
    distractor_ratio: float = 0.25
    image_size: Tuple[int, int] = DEFAULT_IMAGE_SIZE
    bounds: HomographyBounds = field(default_factory=HomographyBounds)
    max_retries: int = 50

    def validate(self) -> 'PairSettings':
        if self.n_keypoints < MIN_CORRESPONDENCES:
            raise ContractError(f"n_keypoints must be >= {MIN_CORRESPONDENCES}, got {self.n_keypoints}")
        if self.descriptor_dim < 1 or self.noise < 0:
            raise ContractError("descriptor_dim must be positive and noise non-negative")
        if not 0.0 <= self.distractor_ratio < 1.0:
            raise ContractError("distractor_ratio must lie in [0, 1)")
        self.bounds.validate()
        return self


def _uniform_positions(rng: np.random.Generator, count: int, image_size: Tuple[int, int]) -> np.ndarray:
    w, h = image_size
    return np.stack([rng.uniform(0, w - 1, size=count), rng.uniform(0, h - 1, size=count)], axis=1)


def _random_descriptors(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    return normalize_rows(rng.standard_normal((count, dim)))


def _in_frame(points: np.ndarray, image_size: Tuple[int, int]) -> np.ndarray:
    w, h = image_size
    return ((points[:, 0] >= 0) & (points[:, 0] <= w - 1)
            & (points[:, 1] >= 0) & (points[:, 1] <= h - 1))


def _draw_pair(rng: np.random.Generator, s: PairSettings) -> PairSample:
    n, c = s.n_keypoints, s.descriptor_dim
    homography = random_homography(rng, s.bounds, s.image_size)

    xy_x = _uniform_positions(rng, n, s.image_size)
    scores_x = rng.uniform(0, 1, size=n)
    latent = _random_descriptors(rng, n, c)

    n_distract = int(round(s.distractor_ratio * n))
    distractor = np.zeros(n, dtype=bool)
    distractor[rng.choice(n, size=n_distract, replace=False)] = True

    projected = homography.project(xy_x)
    partnered = np.flatnonzero(~distractor & _in_frame(projected, s.image_size))
    unmatched_x = np.flatnonzero(~np.isin(np.arange(n), partnered))

    noisy = latent[partnered].astype(np.float64) + s.noise * rng.standard_normal((partnered.size, c))
    extra_xy = _uniform_positions(rng, n_distract, s.image_size)
    xy_y = np.concatenate([projected[partnered], extra_xy], axis=0)
    scores_y = np.concatenate([scores_x[partnered], rng.uniform(0, 1, size=n_distract)])
    desc_y = np.concatenate([normalize_rows(noisy), _random_descriptors(rng, n_distract, c)], axis=0)

    kp_x = KeypointSet(np.column_stack([xy_x, scores_x]), latent, s.image_size)
    kp_y = KeypointSet(np.column_stack([xy_y, scores_y]), desc_y, s.image_size)
    gt = np.stack([partnered, np.arange(partnered.size)], axis=1)
    unmatched_y = np.arange(partnered.size, partnered.size + n_distract)
    return PairSample(kp_x, kp_y, homography, gt, unmatched_x, unmatched_y)


def make_pair(rng: np.random.Generator, n_keypoints: int = 64,
              image_size: Tuple[int, int] = DEFAULT_IMAGE_SIZE, noise: float = 0.1,
              settings: Optional[PairSettings] = None) -> PairSample:
    """
    Draw one labelled pair; draws with fewer than four correspondences are redrawn.

    Args:
        rng: Source of randomness; the sample is a pure function of its state
        n_keypoints: Points in image X
        image_size: (width, height) of both images
        noise: Standard deviation of the descriptor noise in image Y
        settings: Remaining knobs; n_keypoints/image_size/noise above take precedence

    Raises:
        DataGenerationError: retry budget exhausted
    """
    base = settings or PairSettings()
    s = replace(base, n_keypoints=n_keypoints, image_size=tuple(image_size), noise=noise).validate()
    for attempt in range(s.max_retries):
        sample = _draw_pair(rng, s)
        if sample.gt_matches.shape[0] >= MIN_CORRESPONDENCES:
            return sample
        logger.debug(f"Pair draw {attempt} kept {sample.gt_matches.shape[0]} correspondences, redrawing")
    raise DataGenerationError(
        f"Could not draw a pair with {MIN_CORRESPONDENCES} correspondences in {s.max_retries} attempts")


def pad_keypoints(kp: KeypointSet, target_count: int, rng: np.random.Generator) -> KeypointSet:
    """Append uniform in-frame points with random unit descriptors and score 0 up to target_count."""
    extra = target_count - len(kp)
    if extra < 0:
        raise ContractError(f"cannot pad {len(kp)} keypoints down to {target_count}")
    if extra == 0:
        return kp
    positions = np.column_stack([_uniform_positions(rng, extra, kp.image_size), np.zeros(extra)])
    descriptors = _random_descriptors(rng, extra, kp.descriptor_dim)
    return KeypointSet(np.concatenate([kp.positions, positions.astype(np.float32)]),
                       np.concatenate([kp.descriptors, descriptors]), kp.image_size)


def pad_pair(sample: PairSample, target_x: int, target_y: int, rng: np.random.Generator) -> PairSample:
    """Pad both images; every added point is labelled unmatched."""
    kp_x = pad_keypoints(sample.kp_x, target_x, rng)
    kp_y = pad_keypoints(sample.kp_y, target_y, rng)
    return PairSample(
        kp_x, kp_y, sample.homography, sample.gt_matches,
        np.concatenate([sample.gt_unmatched_x, np.arange(len(sample.kp_x), len(kp_x))]),
        np.concatenate([sample.gt_unmatched_y, np.arange(len(sample.kp_y), len(kp_y))]))
