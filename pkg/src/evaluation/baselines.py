import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence

import numpy as np

from src.data.keypoints import KeypointSet
from src.data.synthetic import PairSettings, make_pair
from src.evaluation.metrics import aggregate, compute_metrics
from src.exceptions import ContractError
from src.nn.matcher import MatchSet

logger = logging.getLogger('ParaFormer')

DEFAULT_NOISE_GRID = tuple(float(v) for v in np.round(np.arange(0.05, 0.625, 0.025), 3))


def nn_baseline(kp_x: KeypointSet, kp_y: KeypointSet, mutual: bool = True) -> MatchSet:
    """
    Nearest neighbour in descriptor space (cosine similarity of unit descriptors).

    With `mutual` a match is kept only if i is also the nearest neighbour of j.
    Confidence maps the similarity of [-1, 1] onto [0, 1].
    """
    if len(kp_x) == 0 or len(kp_y) == 0:
        return MatchSet.empty()
    sim = kp_x.descriptors.astype(np.float64) @ kp_y.descriptors.astype(np.float64).T
    rows = np.arange(sim.shape[0])
    nn12 = sim.argmax(axis=1)
    keep = np.ones(rows.size, dtype=bool)
    if mutual:
        nn21 = sim.argmax(axis=0)
        keep = nn21[nn12] == rows
    confidence = np.clip((1.0 + sim[rows, nn12]) / 2.0, 0.0, 1.0)
    return MatchSet(rows[keep], nn12[keep], confidence[keep])


@dataclass
class NoiseCalibration:
    noise: float
    precision: float
    # mean NN-mutual precision per tried noise level
    curve: Dict[float, float] = field(default_factory=dict)


def calibrate_noise(target_precision: float, settings: Optional[PairSettings] = None,
                    noises: Sequence[float] = DEFAULT_NOISE_GRID, pairs: int = 5,
                    seed: int = 0) -> NoiseCalibration:
    """
    Descriptor noise at which the mutual nearest-neighbour baseline reaches `target_precision`.

    Every noise level is scored on pairs drawn from the same seed; the level whose mean
    precision is closest to the target wins, the lower noise on ties.

    Raises:
        ContractError: empty grid, no pairs or a target outside [0, 1]
    """
    if not noises or pairs < 1 or not 0.0 <= target_precision <= 1.0:
        raise ContractError("calibration needs a noise grid, at least one pair and a target in [0, 1]")
    base = settings or PairSettings()
    curve: Dict[float, float] = {}
    for noise in sorted(noises):
        s = replace(base, noise=float(noise))
        rng = np.random.default_rng(seed)
        samples = [make_pair(rng, s.n_keypoints, s.image_size, s.noise, settings=s) for _ in range(pairs)]
        curve[float(noise)] = aggregate(
            [compute_metrics(nn_baseline(p.kp_x, p.kp_y), p) for p in samples]).precision
        logger.debug(f"noise {noise:.3f}: NN-mutual precision {curve[float(noise)]:.3f}")
    best = min(curve, key=lambda n: (abs(curve[n] - target_precision), n))
    logger.info(f"Calibrated descriptor noise {best:.3f} (NN-mutual precision {curve[best]:.3f}, "
                f"target {target_precision:.2f})")
    return NoiseCalibration(noise=best, precision=curve[best], curve=curve)
