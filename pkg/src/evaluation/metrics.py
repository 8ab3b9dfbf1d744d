"""
Match-quality metrics against a known homography.

A predicted match (i, j) is correct when y_j lies within `gt_threshold` pixels of
H·x_i. Precision is over predicted matches, recall over ground-truth matches.
AUC is the area under the fraction-of-matches-below-error curve up to each
threshold, normalized by the threshold; MMA is that fraction at 1..10 px.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from src.data.synthetic import GT_THRESHOLD, PairSample
from src.exceptions import ContractError
from src.nn.matcher import MatchSet

logger = logging.getLogger('ParaFormer')

DEFAULT_AUC_THRESHOLDS = (5.0, 10.0, 20.0)
MMA_THRESHOLDS = tuple(float(t) for t in range(1, 11))


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    auc: Dict[float, float]
    mma: List[float]
    tp: int
    fp: int
    fn: int
    num_matches: int
    empty: bool = False
    pairs: int = 1
    extra: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        d = asdict(self)
        d['auc'] = {f"auc@{t:g}": v for t, v in self.auc.items()}
        return d

    def summary(self) -> str:
        aucs = ' '.join(f"auc@{t:g}={v:.4f}" for t, v in self.auc.items())
        return (f"precision={self.precision:.4f} recall={self.recall:.4f} f1={self.f1:.4f} "
                f"{aucs} mma@3={self.mma[2]:.4f} tp={self.tp} fp={self.fp} fn={self.fn}")


def f1_score(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def match_errors(matches: MatchSet, sample: PairSample) -> np.ndarray:
    """Reprojection error in pixels of every predicted match under the ground-truth H."""
    if len(matches) == 0:
        return np.zeros(0)
    src = sample.kp_x.positions[matches.idx_x, :2]
    dst = sample.kp_y.positions[matches.idx_y, :2].astype(np.float64)
    return np.linalg.norm(sample.homography.project(src) - dst, axis=1)


def error_auc(errors: np.ndarray, threshold: float) -> float:
    """
    Exact area under the empirical cumulative error curve on [0, threshold], over threshold.

    The curve is a step function, so its area is the sum of (threshold − e) over
    errors below the threshold, divided by the number of errors.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        return 0.0
    if threshold <= 0:
        raise ContractError(f"AUC threshold must be positive, got {threshold}")
    return float(np.sum(np.clip(threshold - errors, 0.0, None)) / (errors.size * threshold))


def mma_curve(errors: np.ndarray, thresholds: Sequence[float] = MMA_THRESHOLDS) -> List[float]:
    if errors.size == 0:
        return [0.0 for _ in thresholds]
    return [float(np.mean(errors < t)) for t in thresholds]


def compute_metrics(matches: MatchSet, sample: PairSample,
                    thresholds: Sequence[float] = DEFAULT_AUC_THRESHOLDS,
                    gt_threshold: float = GT_THRESHOLD) -> MetricsReport:
    """
    Score one pair's matches.

    Args:
        matches: Predicted correspondences
        sample: The pair with its ground-truth homography and labels
        thresholds: Pixel thresholds at which AUC is reported
        gt_threshold: Reprojection error below which a match counts as correct

    Returns:
        MetricsReport; an empty match set gives precision 0 and empty=True
    """
    errors = match_errors(matches, sample)
    correct = errors < gt_threshold
    tp = int(correct.sum())
    fp = int(len(matches) - tp)

    has_partner = np.zeros(len(sample.kp_x), dtype=bool)
    has_partner[sample.gt_matches[:, 0]] = True
    found = int(np.sum(correct & has_partner[matches.idx_x])) if len(matches) else 0
    num_gt = int(sample.gt_matches.shape[0])
    fn = num_gt - found

    empty = len(matches) == 0
    precision = 0.0 if empty else tp / len(matches)
    recall = found / num_gt if num_gt else 0.0
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        auc={float(t): error_auc(errors, t) for t in thresholds},
        mma=mma_curve(errors),
        tp=tp, fp=fp, fn=fn,
        num_matches=len(matches),
        empty=empty,
    )


def aggregate(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Mean of the per-pair rates, sum of the counts."""
    if not reports:
        raise ContractError("nothing to aggregate")
    keys = list(reports[0].auc)
    return MetricsReport(
        precision=float(np.mean([r.precision for r in reports])),
        recall=float(np.mean([r.recall for r in reports])),
        f1=float(np.mean([r.f1 for r in reports])),
        auc={k: float(np.mean([r.auc[k] for r in reports])) for k in keys},
        mma=[float(v) for v in np.mean([r.mma for r in reports], axis=0)],
        tp=sum(r.tp for r in reports),
        fp=sum(r.fp for r in reports),
        fn=sum(r.fn for r in reports),
        num_matches=sum(r.num_matches for r in reports),
        empty=sum(r.empty for r in reports) > 0,
        pairs=len(reports),
        extra={'empty_pairs': float(sum(r.empty for r in reports))},
    )
