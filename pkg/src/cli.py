#!/usr/bin/env python3

import sys
import logging
from dataclasses import asdict
from typing import Any, Callable, Dict, List, Optional
import argparse

from src import api
from src.evaluation.flops import render_records, render_table
from src.evaluation.gradient_suite import DEFAULT_SEEDS, DEFAULT_TOLERANCE, run_suite
from src.exceptions import (
    ConfigurationError,
    ContractError,
    DataGenerationError,
    IncompatibleCheckpointError,
    NumericError,
    StorageError,
    UsageError,
)
from src.training.trainer import TrainSettings
from src.utils.cli import MODEL_FLAGS, get_log_level, parse_args
from src.utils.config import (
    DATA_KEYS,
    TRAIN_KEYS,
    env_overrides,
    load_config,
    merge_config_and_args,
    model_keys,
    section,
)
from src.utils.logger import DEFAULT_LOG_FILE, setup_logger
from src.utils.storage import write_artifact

logger = logging.getLogger('ParaFormer')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONTRACT = 2
EXIT_NUMERIC = 3

DATA_DEFAULTS = {
    'pairs': 100,
    'keypoints': 64,
    'descriptor_dim': 256,
    'noise': 0.1,
    'distractor_ratio': 0.25,
    'image_width': 640,
    'image_height': 480,
    'gt_threshold': 3.0,
}

FLOPS_COLUMNS = ['model', 'keypoints', 'gflops', 'ratio', 'attention_rounds']
FLOPS_DETAIL_COLUMNS = ['model', 'keypoints', 'pe', 'projections', 'attention_logits',
                        'attention_softmax', 'attention_values', 'fusion', 'pooling', 'sinkhorn',
                        'total', 'gflops', 'ratio', 'attention_rounds']
PARAMS_COLUMNS = ['model', 'share_qkv', 'share_merge', 'share_ffn', 'params']


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the process exit status."""
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    if isinstance(error, (ContractError, IncompatibleCheckpointError, DataGenerationError)):
        return EXIT_CONTRACT
    return EXIT_USAGE


def args_to_dict(args: argparse.Namespace, keys) -> Dict[str, Any]:
    """Selected argparse values, keeping None so that merge_config_and_args can skip them."""
    return {k: getattr(args, k, None) for k in keys}


def _log_params(title: str, params: Dict[str, Any]) -> None:
    logger.info(title)
    for key, value in params.items():
        logger.info(f"  {key}: {value}")


def _model_overrides(args: argparse.Namespace, config: Dict[str, Any], seed: int) -> Dict[str, Any]:
    """Model fields from the config file, overridden by command-line flags."""
    merged = merge_config_and_args(section(config, 'model', model_keys()), args_to_dict(args, MODEL_FLAGS))
    merged['seed'] = seed
    return merged


def cmd_gen_data(args: argparse.Namespace, config: Dict[str, Any], seed: int) -> int:
    params = merge_config_and_args(section(config, 'data', list(DATA_KEYS)), args_to_dict(
        args, ('pairs', 'keypoints', 'noise', 'descriptor_dim', 'distractor_ratio')))
    for key, value in DATA_DEFAULTS.items():
        if params.get(key) is None:
            params[key] = value
    workers = args.workers or 1
    _log_params("Generating data with the following configuration:",
                {**params, 'seed': seed, 'workers': workers, 'out': args.out})

    summary = api.generate_dataset(
        args.out, pairs=params['pairs'], keypoints=params['keypoints'], noise=params['noise'],
        seed=seed, descriptor_dim=params['descriptor_dim'],
        distractor_ratio=params['distractor_ratio'],
        image_size=(params['image_width'], params['image_height']), workers=workers,
        config_snapshot={'data': params, 'seed': seed})
    print(f"Wrote {summary['pairs']} pairs to {summary['path']} (sha256 {summary['sha256']})")
    print(f"Ground-truth matches per pair: min {summary['min_matches']}, "
          f"mean {summary['mean_matches']:.1f}, max {summary['max_matches']}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, config: Dict[str, Any], seed: int) -> int:
    overrides = _model_overrides(args, config, seed)
    cfg = api.resolve_model_config(None, overrides)
    train_params = merge_config_and_args(section(config, 'train', list(TRAIN_KEYS)), args_to_dict(
        args, ('epochs', 'lr', 'weight_decay', 'warmup_epochs', 'grad_clip')))
    settings = TrainSettings(**train_params, seed=seed).validate()
    snapshot = {'model': cfg.to_dict(), 'train': asdict(settings), 'data': args.data,
                'seed': seed, 'resume': args.resume}
    _log_params("Training with the following configuration:",
                {**cfg.to_dict(), **asdict(settings), 'data': args.data, 'out': args.out})

    manifest = api.train_model(args.data, args.out, cfg, settings, resume=args.resume,
                               config_snapshot=snapshot)
    losses = [m['loss'] for m in manifest.epoch_metrics]
    if losses:
        print(f"Trained {len(losses)} epochs: loss {losses[0]:.6f} -> {losses[-1]:.6f}")
    print(f"Best weights: {args.out} (sha256 {manifest.weights_sha256})")
    return EXIT_OK


def cmd_match(args: argparse.Namespace, config: Dict[str, Any], seed: int) -> int:
    overrides = _model_overrides(args, config, seed)
    records = api.match_dataset(args.checkpoint, args.data, args.out, overrides)
    total = sum(len(r['idx_x']) for r in records)
    print(f"Matched {len(records)} pairs ({total} matches) into {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: Dict[str, Any], seed: int) -> int:
    overrides = _model_overrides(args, config, seed)
    data = section(config, 'data', list(DATA_KEYS))
    gt_threshold = args.gt_threshold or data.get('gt_threshold') or DATA_DEFAULTS['gt_threshold']
    baseline = args.baseline or not args.checkpoint
    reports = api.evaluate_dataset(args.data, args.checkpoint, baseline=baseline, overrides=overrides,
                                   gt_threshold=gt_threshold, workers=args.workers or 1, out=args.out)
    for name, report in reports.items():
        print(f"{name}: {report.summary()}")
    return EXIT_OK


def cmd_flops(args: argparse.Namespace, config: Dict[str, Any], seed: int) -> int:
    keypoints = args.keypoints or [512, 1024, 2048]
    if any(k < 0 for k in keypoints):
        raise UsageError("keypoint counts must be non-negative")
    descriptor_dim = args.descriptor_dim or section(config, 'model').get('descriptor_dim', 256)
    report = api.flops_report(keypoints, descriptor_dim, ablations=args.ablations, params=args.params)

    if args.format == 'csv':
        text = render_records(report['flops'], FLOPS_DETAIL_COLUMNS)
        if report['params']:
            text += '\n\n' + render_records(report['params'], PARAMS_COLUMNS)
    else:
        text = render_table(report['flops'], FLOPS_COLUMNS)
        if report['params']:
            text += '\n\n' + render_table(report['params'], PARAMS_COLUMNS)
    print(text)
    if args.out:
        write_artifact(args.out, render_records(report['flops'], FLOPS_DETAIL_COLUMNS) + '\n')
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace, config: Dict[str, Any], seed: int) -> int:
    seeds = 1 if args.quick else (args.seeds or DEFAULT_SEEDS)
    tolerance = args.tolerance or DEFAULT_TOLERANCE
    checks = run_suite(seeds=seeds, tolerance=tolerance, include_model=not args.quick,
                       op_seeds=1 if args.quick else None)
    failed = [c for c in checks if not c.passed]
    worst = max(checks, key=lambda c: c.max_abs_error)
    print(f"{len(checks) - len(failed)}/{len(checks)} gradient checks passed "
          f"(worst: {worst.name} seed {worst.seed}, abs err {worst.max_abs_error:.2e})")
    for c in failed:
        print(f"FAILED {c.name} seed {c.seed}: rel err {c.max_rel_error:.2e}, abs err {c.max_abs_error:.2e}")
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, Dict[str, Any], int], int]] = {
    'gen-data': cmd_gen_data,
    'train': cmd_train,
    'match': cmd_match,
    'eval': cmd_eval,
    'flops': cmd_flops,
    'gradcheck': cmd_gradcheck,
}


def run(argv: Optional[List[str]] = None) -> int:
    """Main function to run ParaFormer from the command line."""
    try:
        args = parse_args(argv)
        config = load_config(args.config)
        env = env_overrides()
        log_level = get_log_level(args.log_level or env.get('log_level') or 'INFO')
    except (UsageError, ConfigurationError, AttributeError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE

    setup_logger(args.log_file or DEFAULT_LOG_FILE, log_level)

    seed = args.seed
    if seed is None:
        seed = env.get('seed', section(config, 'model').get('seed', 0))

    try:
        return COMMANDS[args.command](args, config, seed)
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        return EXIT_USAGE
    except (UsageError, ConfigurationError, StorageError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_USAGE
    except (ContractError, IncompatibleCheckpointError, DataGenerationError, NumericError) as e:
        logger.critical(f"{type(e).__name__}: {e}")
        return exit_code_for(e)
    except Exception as e:
        if not getattr(e, 'already_logged', False):
            logger.critical(f"Unhandled exception: {str(e)}", exc_info=True)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(run())
