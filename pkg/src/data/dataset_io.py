import logging
from collections import OrderedDict
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.data.homography import Homography
from src.data.keypoints import KeypointSet
from src.data.synthetic import PairSample
from src.exceptions import IncompatibleCheckpointError
from src.utils import blobfile

logger = logging.getLogger('ParaFormer')

DATASET_KIND = 'paraformer-dataset'
RECORD_FIELDS = ('x.positions', 'x.descriptors', 'y.positions', 'y.descriptors',
                 'homography', 'gt_matches', 'gt_unmatched_x', 'gt_unmatched_y')


def _record_entries(r: int, sample: PairSample) -> List[Tuple[str, np.ndarray]]:
    prefix = f"pairs.{r:06d}"
    return [
        (f"{prefix}.x.positions", sample.kp_x.positions.astype(np.float32)),
        (f"{prefix}.x.descriptors", sample.kp_x.descriptors.astype(np.float32)),
        (f"{prefix}.y.positions", sample.kp_y.positions.astype(np.float32)),
        (f"{prefix}.y.descriptors", sample.kp_y.descriptors.astype(np.float32)),
        (f"{prefix}.homography", sample.H.astype(np.float64)),
        (f"{prefix}.gt_matches", sample.gt_matches.astype(np.int32)),
        (f"{prefix}.gt_unmatched_x", sample.gt_unmatched_x.astype(np.int32)),
        (f"{prefix}.gt_unmatched_y", sample.gt_unmatched_y.astype(np.int32)),
    ]


def save_dataset(path: str, samples: Sequence[PairSample],
                 meta: Optional[Dict[str, Any]] = None) -> str:
    """
    Write every pair of a split into one blob file.

    Returns:
        SHA-256 of the written file
    """
    entries: 'OrderedDict[str, np.ndarray]' = OrderedDict()
    sizes = []
    for r, sample in enumerate(samples):
        entries.update(_record_entries(r, sample))
        sizes.append([sample.kp_x.image_size, sample.kp_y.image_size])
    file_meta = {'kind': DATASET_KIND, 'count': len(samples), 'image_sizes': sizes}
    file_meta.update(meta or {})
    digest = blobfile.save(path, entries, file_meta)
    logger.info(f"Saved {len(samples)} pairs to {path}")
    return digest


def load_dataset(path: str) -> Tuple[List[PairSample], Dict[str, Any]]:
    """
    Read a dataset written by save_dataset.

    Raises:
        IncompatibleCheckpointError: wrong file kind, missing records or a damaged file
    """
    entries, meta = blobfile.load(path)
    if meta.get('kind') != DATASET_KIND:
        raise IncompatibleCheckpointError(f"{path} is not a dataset file")
    count = int(meta.get('count', 0))
    sizes = meta.get('image_sizes', [])
    if len(sizes) != count:
        raise IncompatibleCheckpointError(f"{path}: {len(sizes)} image sizes for {count} records")

    samples = []
    for r in range(count):
        prefix = f"pairs.{r:06d}"
        try:
            rec = {f: entries[f"{prefix}.{f}"] for f in RECORD_FIELDS}
        except KeyError as e:
            raise IncompatibleCheckpointError(f"{path}: record {r} lacks {e}") from e
        size_x, size_y = sizes[r]
        samples.append(PairSample(
            kp_x=KeypointSet(rec['x.positions'], rec['x.descriptors'], tuple(size_x)),
            kp_y=KeypointSet(rec['y.positions'], rec['y.descriptors'], tuple(size_y)),
            homography=Homography(rec['homography']),
            gt_matches=rec['gt_matches'],
            gt_unmatched_x=rec['gt_unmatched_x'],
            gt_unmatched_y=rec['gt_unmatched_y'],
        ))
    logger.info(f"Loaded {count} pairs from {path}")
    return samples, meta
