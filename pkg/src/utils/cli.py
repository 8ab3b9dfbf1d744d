import argparse
import logging
from typing import List, Optional

from src.exceptions import UsageError

LOG_LEVELS = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']
VARIANT_CHOICES = ['paraformer', 'paraformer_u', 'serial_baseline']

# flags whose dest is a ModelConfig field
MODEL_FLAGS = ('variant', 'descriptor_dim', 'num_layers', 'heads', 'pe', 'pooling',
               'sinkhorn_iterations', 'match_threshold')


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser that raises UsageError instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group('Common options')
    group.add_argument('--config',
                       help='Path to configuration file (default: PARAFORMER_CONFIG or standard locations)')
    group.add_argument('--log-level', choices=LOG_LEVELS,
                       help='Set the logging level (default: INFO)')
    group.add_argument('--log-file',
                       help='Log file path (default: paraformer.log)')
    group.add_argument('--seed', type=int,
                       help='Random seed (default: PARAFORMER_SEED or 0)')


def _add_model(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group('Model options')
    group.add_argument('--variant', choices=VARIANT_CHOICES,
                       help='Model variant (default: paraformer)')
    group.add_argument('--descriptor-dim', type=int,
                       help='Descriptor width C (default: 256)')
    group.add_argument('--num-layers', type=int,
                       help='Attention layers L of paraformer / serial_baseline (default: 9)')
    group.add_argument('--heads', type=int, help='Attention heads (default: 4)')
    group.add_argument('--pe', choices=['wave', 'mlp', 'none'],
                       help='Position encoder (default: wave; mlp for serial_baseline)')
    group.add_argument('--pooling', choices=['attentional', 'gpool', 'random'],
                       help='Pooling of paraformer_u (default: attentional)')
    group.add_argument('--sinkhorn-iterations', type=int,
                       help='Sinkhorn iterations T (default: 100)')
    group.add_argument('--match-threshold', type=float,
                       help='Confidence threshold for extracted matches (default: 0.2)')


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='paraformer',
                            description='ParaFormer - parallel attention feature matching at desk scale')
    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND')
    subparsers.required = True

    gen = subparsers.add_parser('gen-data', help='Generate a synthetic homography dataset')
    gen.add_argument('--pairs', type=int, help='Number of image pairs (default: 100)')
    gen.add_argument('--keypoints', type=int, help='Keypoints in image X (default: 64)')
    gen.add_argument('--noise', type=float, help='Descriptor noise sigma (default: 0.1)')
    gen.add_argument('--descriptor-dim', type=int, help='Descriptor width (default: 256)')
    gen.add_argument('--distractor-ratio', type=float,
                     help='Fraction of X points without a partner (default: 0.25)')
    gen.add_argument('--workers', type=int, help='Worker threads (default: 1)')
    gen.add_argument('--out', required=True, help='Dataset file to write')
    _add_common(gen)

    train = subparsers.add_parser('train', help='Train a model on a dataset')
    train.add_argument('--data', required=True, help='Dataset file')
    train.add_argument('--out', required=True, help='Checkpoint file for the best weights')
    train.add_argument('--epochs', type=int, help='Epochs (default: 20)')
    train.add_argument('--lr', type=float, help='Peak learning rate (default: 0.0001)')
    train.add_argument('--weight-decay', type=float, help='Decoupled weight decay (default: 0.01)')
    train.add_argument('--warmup-epochs', type=int, help='Linear warm-up epochs (default: 1)')
    train.add_argument('--grad-clip', type=float, help='Global gradient norm clip (default: off)')
    train.add_argument('--resume', help='Resumable checkpoint (<out>.last.bin) to continue from')
    _add_model(train)
    _add_common(train)

    match = subparsers.add_parser('match', help='Match every pair of a dataset')
    match.add_argument('--checkpoint', required=True, help='Trained weights')
    match.add_argument('--data', required=True, help='Dataset file')
    match.add_argument('--out', required=True, help='JSON file receiving the matches')
    _add_model(match)
    _add_common(match)

    ev = subparsers.add_parser('eval', help='Evaluate matches against ground truth')
    ev.add_argument('--data', required=True, help='Dataset file')
    ev.add_argument('--checkpoint', help='Trained weights; without it only the NN baseline is scored')
    ev.add_argument('--baseline', action='store_true',
                    help='Also score the mutual nearest-neighbour baseline')
    ev.add_argument('--gt-threshold', type=float,
                    help='Reprojection error counted as correct, pixels (default: 3)')
    ev.add_argument('--workers', type=int, help='Worker threads (default: 1)')
    ev.add_argument('--out', help='JSON file receiving the report')
    _add_model(ev)
    _add_common(ev)

    flops = subparsers.add_parser('flops', help='Analytic FLOPs of every variant')
    flops.add_argument('--keypoints', type=int, nargs='+',
                       help='Keypoint counts per image (default: 512 1024 2048)')
    flops.add_argument('--descriptor-dim', type=int, help='Descriptor width (default: 256)')
    flops.add_argument('--ablations', action='store_true',
                       help='Add the attention-weight sharing on/off pair')
    flops.add_argument('--params', action='store_true',
                       help='Add parameter counts of the weight-sharing grid')
    flops.add_argument('--format', choices=['table', 'csv'], default='table',
                       help='Output format (default: table)')
    flops.add_argument('--out', help='Also write the records to this file')
    _add_common(flops)

    grad = subparsers.add_parser('gradcheck', help='Finite-difference gradient suite')
    grad.add_argument('--seeds', type=int, help='Toy model seeds; op cases run over twice as many (default: 10)')
    grad.add_argument('--tolerance', type=float, help='Relative error tolerance (default: 1e-3)')
    grad.add_argument('--quick', action='store_true', help='One seed, ops only')
    _add_common(grad)

    return parser


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Parse command line arguments.

    Raises:
        UsageError: unknown command, missing or malformed flag
    """
    return build_parser().parse_args(argv)


def get_log_level(level_name: str) -> int:
    """
    Convert a string log level to the corresponding logging level.

    Args:
        level_name: String representation of the log level

    Returns:
        The corresponding logging level constant

    Raises:
        AttributeError: If the log level name is invalid
    """
    level = getattr(logging, level_name.upper(), None)
    if not isinstance(level, int):
        raise AttributeError(f"Invalid log level: {level_name}")
    return level
