"""
End-to-end model: position encoding, attention stack, optimal matching.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.data.keypoints import KeypointSet
from src.exceptions import ConfigurationError, ContractError, IncompatibleCheckpointError
from src.models.config import ModelConfig
from src.models.param_store import ParamStore
from src.nn.attention import AttentionMaps, ParallelAttentionLayer, SerialLayerPair
from src.nn.matcher import Assignment, MatchSet, OptimalMatcher, extract_matches, matching_loss
from src.nn.unet import GraphUNet
from src.nn.wave_pe import build_position_encoder, keypoint_inputs
from src.tensor import Tensor
from src.utils import blobfile

logger = logging.getLogger('ParaFormer')


@dataclass
class ForwardResult:
    assignment: Assignment
    matches: MatchSet
    diagnostics: Dict[str, Any] = field(default_factory=dict)


class ParaFormer:
    """
    One of the three model variants over a ParamStore.

    Built with an rng the model creates fresh parameters in `store`; built without
    one it binds to the parameters already there and rejects any it does not use.
    """

    def __init__(self, cfg: ModelConfig, store: ParamStore,
                 rng: Optional[np.random.Generator] = None):
        cfg.validate()
        self.cfg = cfg
        self.store = store
        c = cfg.descriptor_dim
        self.position_encoder = build_position_encoder(cfg.pe, store, c, rng)

        self.layers: List[Any] = []
        self.unet: Optional[GraphUNet] = None
        if cfg.variant == 'paraformer':
            self.layers = [
                ParallelAttentionLayer(store, f"layers.{i}", c, cfg.heads, cfg.share_qkv,
                                       cfg.share_merge, cfg.share_attn_weights, cfg.share_ffn, rng)
                for i in range(cfg.num_layers)]
        elif cfg.variant == 'serial_baseline':
            self.layers = [SerialLayerPair(store, f"layers.{i}", c, cfg.heads, rng)
                           for i in range(cfg.num_layers)]
        else:
            self.unet = GraphUNet(store, 'unet', cfg.stages, cfg.heads, cfg.pooling, cfg.seed,
                                  cfg.share_qkv, cfg.share_merge, cfg.share_attn_weights,
                                  cfg.share_ffn, rng)
        self.matcher = OptimalMatcher(store, 'matcher', cfg.sinkhorn_iterations, rng)

        leftovers = store.unclaimed()
        if leftovers:
            raise IncompatibleCheckpointError(
                f"Checkpoint has {len(leftovers)} tensors this model does not use, e.g. {leftovers[0]}")

    @property
    def dtype(self):
        tensors = self.store.tensors()
        return tensors[0].dtype if tensors else np.float32

    @property
    def num_attention_layers(self) -> int:
        if self.unet is not None:
            return self.unet.total_layers
        return len(self.layers)

    def with_store(self, store: ParamStore) -> 'ParaFormer':
        """Same architecture bound to another store (a float64 copy, a loaded checkpoint)."""
        return ParaFormer(self.cfg, store)

    def _check_inputs(self, kp_x: KeypointSet, kp_y: KeypointSet) -> None:
        for kp in (kp_x, kp_y):
            kp.validate()
            if kp.descriptor_dim != self.cfg.descriptor_dim:
                raise ConfigurationError(
                    f"Descriptor dim {kp.descriptor_dim} does not match model dim {self.cfg.descriptor_dim}")
            if len(kp) < self.cfg.min_keypoints:
                raise ContractError(
                    f"{self.cfg.variant} needs at least {self.cfg.min_keypoints} keypoints, got {len(kp)}")

    def encode(self, kp: KeypointSet) -> Tensor:
        return self.position_encoder(*keypoint_inputs(kp, self.dtype))

    def features(self, kp_x: KeypointSet, kp_y: KeypointSet, keep_maps: bool = False
                 ) -> Tuple[Tensor, Tensor, Dict[str, Any]]:
        """Matching descriptors of both images after the attention stack."""
        self._check_inputs(kp_x, kp_y)
        x = self.encode(kp_x)
        y = self.encode(kp_y)
        maps: List[AttentionMaps] = []
        if self.unet is not None:
            x, y, trace = self.unet(x, y)
            point_counts = trace.point_counts
            maps = trace.maps
        else:
            point_counts = []
            for layer in self.layers:
                point_counts.append((x.shape[0], y.shape[0]))
                x, y, layer_maps = layer(x, y)
                maps.append(layer_maps)
        rounds = 2 * len(self.layers) if self.cfg.variant == 'serial_baseline' else len(maps)
        diagnostics: Dict[str, Any] = {'point_counts': point_counts, 'attention_rounds': rounds}
        if keep_maps:
            diagnostics['maps'] = maps
        return x, y, diagnostics

    def forward(self, kp_x: KeypointSet, kp_y: KeypointSet, keep_maps: bool = False) -> ForwardResult:
        x, y, diagnostics = self.features(kp_x, kp_y, keep_maps)
        assignment = self.matcher(x, y)
        matches = extract_matches(assignment, self.cfg.match_threshold)
        return ForwardResult(assignment=assignment, matches=matches, diagnostics=diagnostics)

    __call__ = forward

    def loss(self, sample) -> Tensor:
        """Matching loss of one PairSample (1 × 1 tensor, differentiable w.r.t. the store)."""
        result = self.forward(sample.kp_x, sample.kp_y)
        return matching_loss(result.assignment, sample.gt_matches,
                             sample.gt_unmatched_x, sample.gt_unmatched_y)


def build(cfg: ModelConfig, seed: Optional[int] = None) -> Tuple[ParamStore, ParaFormer]:
    """
    Fresh parameters for `cfg`, initialized deterministically from `seed` (cfg.seed if None).

    Raises:
        ConfigurationError: inconsistent configuration
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    store = ParamStore(cfg.architecture_hash())
    model = ParaFormer(cfg, store, rng)
    logger.info(f"Built {cfg.variant} with {model.num_attention_layers} attention layers, "
                f"{store.count()} parameters")
    return store, model


def save(store: ParamStore, path: str, cfg: Optional[ModelConfig] = None,
         extra: Optional[Dict[str, np.ndarray]] = None) -> str:
    """Write weights; returns the file's SHA-256."""
    meta = {'config': cfg.to_dict()} if cfg is not None else {}
    return store.save(path, extra=extra, meta=meta)


def load(path: str, cfg: ModelConfig) -> ParamStore:
    store, _, _ = ParamStore.load(path, expected_hash=cfg.architecture_hash())
    return store


def load_model(path: str, cfg: ModelConfig) -> Tuple[ParamStore, ParaFormer]:
    """
    Load a checkpoint and bind it to a model of configuration `cfg`.

    Raises:
        IncompatibleCheckpointError: hash, name or shape mismatch, or a damaged file
    """
    store = load(path, cfg)
    model = ParaFormer(cfg, store)
    logger.info(f"Loaded {len(store)} tensors from {path}")
    return store, model


def read_config(path: str) -> ModelConfig:
    """
    Model configuration recorded in a checkpoint's metadata.

    Raises:
        IncompatibleCheckpointError: damaged file or no recorded configuration
    """
    _, meta = blobfile.load(path)
    if 'config' not in meta:
        raise IncompatibleCheckpointError(f"{path} does not record its model configuration")
    try:
        return ModelConfig.from_dict(meta['config'])
    except ConfigurationError as e:
        raise IncompatibleCheckpointError(f"{path}: {e}") from e


def count_parameters(cfg: ModelConfig) -> int:
    """Number of scalar parameters of a freshly built model."""
    store, _ = build(cfg)
    return store.count()
