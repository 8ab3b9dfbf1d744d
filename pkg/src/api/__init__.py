import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.data.dataset_io import load_dataset, save_dataset
from src.data.synthetic import DEFAULT_IMAGE_SIZE, GT_THRESHOLD, PairSample, PairSettings, make_pair
from src.evaluation.baselines import nn_baseline
from src.evaluation.flops import DEFAULT_KEYPOINTS, flops_table
from src.evaluation.metrics import DEFAULT_AUC_THRESHOLDS, MetricsReport, aggregate, compute_metrics
from src.exceptions import ConfigurationError
from src.models.config import ABLATIONS, ModelConfig, ablation_config
from src.models.paraformer import ParaFormer, build, count_parameters, load_model, read_config
from src.models.training_stats import RunManifest
from src.nn.matcher import MatchSet
from src.training.trainer import TrainSettings, Trainer
from src.utils.storage import check_writable, write_json

logger = logging.getLogger('ParaFormer')

__all__ = ['generate_dataset', 'train_model', 'match_dataset', 'evaluate_dataset', 'flops_report',
           'resolve_model_config', 'SHARING_GRID']

SHARING_GRID = ('share_none', 'share_ffn', 'share_qkv', 'share_merge', 'share_qkv_merge')


def _fan_out(fn: Callable[[int], Any], count: int, workers: int) -> List[Any]:
    """Run fn over range(count), in order, on up to `workers` threads."""
    if workers <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def generate_dataset(out: str, pairs: int = 100, keypoints: int = 64, noise: float = 0.1,
                     seed: int = 0, descriptor_dim: int = 256, distractor_ratio: float = 0.25,
                     image_size: Tuple[int, int] = DEFAULT_IMAGE_SIZE, workers: int = 1,
                     config_snapshot: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Generate `pairs` labelled pairs and write them to `out`.

    Pair r is drawn from its own child of SeedSequence(seed), so the file does not
    depend on the number of worker threads.

    Args:
        out: Dataset file to write
        pairs: Number of pairs
        keypoints: Keypoints in image X
        noise: Descriptor noise sigma
        seed: Root seed
        descriptor_dim: Descriptor width
        distractor_ratio: Fraction of X points without a partner
        image_size: (width, height)
        workers: Worker threads
        config_snapshot: Resolved configuration stored in the file's metadata

    Returns:
        Summary dictionary (path, pairs, sha256, correspondence statistics)

    Raises:
        ContractError: invalid settings
        StorageError: `out` is not writable
        DataGenerationError: a pair could not be drawn
    """
    if pairs < 1:
        raise ConfigurationError("pairs must be >= 1")
    settings = PairSettings(n_keypoints=keypoints, descriptor_dim=descriptor_dim, noise=noise,
                            distractor_ratio=distractor_ratio, image_size=tuple(image_size)).validate()
    check_writable(out)

    children = np.random.SeedSequence(seed).spawn(pairs)

    def draw(r: int) -> PairSample:
        return make_pair(np.random.default_rng(children[r]), keypoints, settings.image_size, noise,
                         settings=settings)

    started = time.time()
    samples = _fan_out(draw, pairs, workers)
    counts = np.array([s.gt_matches.shape[0] for s in samples])
    meta = {'seed': seed, 'settings': {'keypoints': keypoints, 'noise': noise,
                                       'descriptor_dim': descriptor_dim,
                                       'distractor_ratio': distractor_ratio,
                                       'image_size': list(settings.image_size)},
            'config': config_snapshot or {}}
    digest = save_dataset(out, samples, meta)
    summary = {'path': out, 'pairs': pairs, 'sha256': digest,
               'min_matches': int(counts.min()), 'mean_matches': float(counts.mean()),
               'max_matches': int(counts.max()), 'seconds': time.time() - started}
    logger.info(f"Generated {pairs} pairs: {summary['mean_matches']:.1f} matches on average "
                f"(min {summary['min_matches']}, max {summary['max_matches']})")
    return summary


def resolve_model_config(checkpoint: Optional[str] = None,
                         overrides: Optional[Dict[str, Any]] = None) -> ModelConfig:
    """
    Model configuration from a checkpoint (or the defaults), with overrides applied.

    Overrides of architecture fields make the later load fail with
    IncompatibleCheckpointError, which is how a config/checkpoint mismatch surfaces.
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    if checkpoint:
        base = read_config(checkpoint)
        return ModelConfig.from_dict({**base.to_dict(), **overrides})
    variant = overrides.pop('variant', 'paraformer')
    descriptor_dim = overrides.pop('descriptor_dim', 256)
    return ModelConfig.defaults(variant, descriptor_dim, **overrides)


def train_model(data: str, out: str, cfg: ModelConfig, settings: Optional[TrainSettings] = None,
                resume: Optional[str] = None, config_snapshot: Optional[Dict[str, Any]] = None,
                on_epoch_end: Optional[Callable[[int, float], None]] = None) -> RunManifest:
    """
    Train a model on a dataset file and write its checkpoints next to `out`.

    Returns:
        The run manifest (also written to `<out>.manifest.json`)
    """
    settings = (settings or TrainSettings()).validate()
    check_writable(out)
    samples, _ = load_dataset(data)
    if samples and samples[0].kp_x.descriptor_dim != cfg.descriptor_dim:
        raise ConfigurationError(
            f"dataset descriptors are {samples[0].kp_x.descriptor_dim}-d, model expects {cfg.descriptor_dim}")
    _, model = build(cfg, settings.seed)
    trainer = Trainer(model, settings, checkpoint_path=out, on_epoch_end=on_epoch_end,
                      config_snapshot=config_snapshot)
    if resume:
        trainer.resume(resume)
    return trainer.fit(samples, settings.epochs)


def _run_model(model: ParaFormer, samples: Sequence[PairSample], workers: int) -> List[MatchSet]:
    return _fan_out(lambda r: model(samples[r].kp_x, samples[r].kp_y).matches, len(samples), workers)


def match_dataset(checkpoint: str, data: str, out: Optional[str] = None,
                  overrides: Optional[Dict[str, Any]] = None, workers: int = 1) -> List[Dict[str, Any]]:
    """
    Match every pair of a dataset with a trained model.

    Returns:
        One record per pair: pair index, idx_x, idx_y, confidence
    """
    cfg = resolve_model_config(checkpoint, overrides)
    if out:
        check_writable(out)
    _, model = load_model(checkpoint, cfg)
    samples, _ = load_dataset(data)
    records = [{'pair': r, 'idx_x': m.idx_x.tolist(), 'idx_y': m.idx_y.tolist(),
                'confidence': m.confidence.tolist()}
               for r, m in enumerate(_run_model(model, samples, workers))]
    total = sum(len(rec['idx_x']) for rec in records)
    logger.info(f"Matched {len(records)} pairs, {total} matches in total")
    if out:
        write_json(out, {'checkpoint': checkpoint, 'data': data, 'config': cfg.to_dict(),
                         'matches': records})
    return records


def evaluate_dataset(data: str, checkpoint: Optional[str] = None, baseline: bool = True,
                     overrides: Optional[Dict[str, Any]] = None, gt_threshold: float = GT_THRESHOLD,
                     thresholds: Sequence[float] = DEFAULT_AUC_THRESHOLDS, workers: int = 1,
                     out: Optional[str] = None) -> Dict[str, MetricsReport]:
    """
    Aggregate metrics of the trained model and/or the mutual nearest-neighbour baseline.

    Returns:
        Mapping from method name ('model', 'nn_mutual') to its aggregated report
    """
    if not checkpoint and not baseline:
        raise ConfigurationError("nothing to evaluate: give a checkpoint or enable the baseline")
    if out:
        check_writable(out)
    samples, _ = load_dataset(data)
    predictions: Dict[str, List[MatchSet]] = {}
    if checkpoint:
        cfg = resolve_model_config(checkpoint, overrides)
        _, model = load_model(checkpoint, cfg)
        predictions['model'] = _run_model(model, samples, workers)
    if baseline:
        predictions['nn_mutual'] = _fan_out(
            lambda r: nn_baseline(samples[r].kp_x, samples[r].kp_y), len(samples), workers)

    reports = {}
    for name, matches in predictions.items():
        per_pair = [compute_metrics(m, s, thresholds, gt_threshold) for m, s in zip(matches, samples)]
        reports[name] = aggregate(per_pair)
        logger.info(f"{name}: {reports[name].summary()}")
    if out:
        write_json(out, {k: v.to_dict() for k, v in reports.items()})
    return reports


def flops_report(keypoints: Sequence[int] = DEFAULT_KEYPOINTS, descriptor_dim: int = 256,
                 ablations: bool = False, params: bool = False) -> Dict[str, Any]:
    """
    FLOPs records of the three variants (plus the sharing on/off pair) and parameter counts.

    Returns:
        {'flops': [records], 'params': [records]}; 'params' is empty unless requested
    """
    models: Dict[str, ModelConfig] = {
        variant: ModelConfig.defaults(variant, descriptor_dim)
        for variant in ('serial_baseline', 'paraformer', 'paraformer_u')}
    if ablations:
        for name in ('attn_sharing_off', 'attn_sharing_on'):
            models[name] = ablation_config(name, descriptor_dim)
    rows = flops_table(models, keypoints)

    param_rows = []
    if params:
        for name in SHARING_GRID:
            _, preset = ABLATIONS[name]
            cfg = ablation_config(name, descriptor_dim)
            param_rows.append({'model': name, **{k: v for k, v in preset.items()},
                               'params': count_parameters(cfg)})
    return {'flops': rows, 'params': param_rows}
