import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, List, Tuple

from src.exceptions import ConfigurationError

VARIANTS = ('paraformer', 'paraformer_u', 'serial_baseline')
POSITION_ENCODERS = ('wave', 'mlp', 'none')
POOLINGS = ('attentional', 'gpool', 'random')

FULL_SIZE_DESCRIPTOR_DIM = 256
FULL_SIZE_NUM_LAYERS = 9
FULL_SIZE_STAGE_DEPTHS = (2, 1, 2, 1, 2)
FULL_SIZE_STAGE_DIMS = (256, 384, 128, 384, 256)

# fields that change the parameter layout; the checkpoint hash covers only these
ARCHITECTURE_FIELDS = (
    'variant', 'descriptor_dim', 'num_layers', 'heads', 'pe',
    'share_qkv', 'share_merge', 'share_attn_weights', 'share_ffn',
    'stage_depths', 'stage_dims', 'pooling',
)


@dataclass(frozen=True)
class StageConfig:
    """
    Encoder-decoder layout of ParaFormer-U.

    Five stages of parallel attention layers; pooling follows stages 1 and 2 and
    unpooling precedes stages 4 and 5, so mirrored stages (1/5, 2/4) share a
    width and their outputs can be added through the skip connections.
    """
    depths: Tuple[int, ...] = FULL_SIZE_STAGE_DEPTHS
    dims: Tuple[int, ...] = FULL_SIZE_STAGE_DIMS

    def validate(self, heads: int) -> None:
        if len(self.depths) != 5 or len(self.dims) != 5:
            raise ConfigurationError("ParaFormer-U needs exactly five stages")
        if any(d < 1 for d in self.depths):
            raise ConfigurationError(f"Stage depths must be >= 1, got {self.depths}")
        if self.dims[0] != self.dims[4] or self.dims[1] != self.dims[3]:
            raise ConfigurationError(f"Mirrored stages need matching dims, got {self.dims}")
        for d in self.dims:
            if d % heads:
                raise ConfigurationError(f"Stage dim {d} not divisible by {heads} heads")

    @property
    def total_layers(self) -> int:
        return sum(self.depths)

    @staticmethod
    def point_counts(n: int) -> List[int]:
        """Points seen by each stage when k = ceil(n/2) at every pooling."""
        half = math.ceil(n / 2)
        quarter = math.ceil(half / 2)
        return [n, half, quarter, half, n]

    @classmethod
    def for_descriptor_dim(cls, descriptor_dim: int, heads: int) -> 'StageConfig':
        """Full-size stage widths scaled by descriptor_dim/256, rounded to a multiple of heads."""
        dims = []
        for d in FULL_SIZE_STAGE_DIMS:
            scaled = d * descriptor_dim / FULL_SIZE_DESCRIPTOR_DIM
            dims.append(max(heads, int(round(scaled / heads)) * heads))
        return cls(depths=FULL_SIZE_STAGE_DEPTHS, dims=tuple(dims))


@dataclass
class ModelConfig:
    """Architecture and inference hyperparameters for every model variant."""
    variant: str = 'paraformer'
    descriptor_dim: int = FULL_SIZE_DESCRIPTOR_DIM
    num_layers: int = FULL_SIZE_NUM_LAYERS
    heads: int = 4
    pe: str = 'wave'
    share_qkv: bool = True
    share_merge: bool = True
    share_attn_weights: bool = True
    share_ffn: bool = False
    stage_depths: Tuple[int, ...] = FULL_SIZE_STAGE_DEPTHS
    stage_dims: Tuple[int, ...] = FULL_SIZE_STAGE_DIMS
    pooling: str = 'attentional'
    sinkhorn_iterations: int = 100
    match_threshold: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.stage_depths = tuple(int(d) for d in self.stage_depths)
        self.stage_dims = tuple(int(d) for d in self.stage_dims)

    @property
    def stages(self) -> StageConfig:
        return StageConfig(depths=self.stage_depths, dims=self.stage_dims)

    @property
    def attention_layers(self) -> int:
        """Number of parallel attention layers (serial baseline: self+cross pairs)."""
        if self.variant == 'paraformer_u':
            return self.stages.total_layers
        return self.num_layers

    @property
    def min_keypoints(self) -> int:
        # two halvings must leave at least one point
        return 4 if self.variant == 'paraformer_u' else 1

    def validate(self) -> 'ModelConfig':
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"Unknown variant '{self.variant}', expected one of {VARIANTS}")
        if self.pe not in POSITION_ENCODERS:
            raise ConfigurationError(f"Unknown position encoder '{self.pe}'")
        if self.pooling not in POOLINGS:
            raise ConfigurationError(f"Unknown pooling '{self.pooling}'")
        if self.descriptor_dim < 1 or self.heads < 1 or self.num_layers < 1:
            raise ConfigurationError("descriptor_dim, heads and num_layers must be positive")
        if self.descriptor_dim % self.heads:
            raise ConfigurationError(
                f"descriptor_dim {self.descriptor_dim} not divisible by {self.heads} heads")
        if self.sinkhorn_iterations < 1:
            raise ConfigurationError("sinkhorn_iterations must be >= 1")
        if not 0.0 <= self.match_threshold <= 1.0:
            raise ConfigurationError("match_threshold must lie in [0, 1]")
        if self.variant == 'paraformer_u':
            self.stages.validate(self.heads)
            if self.stage_dims[0] != self.descriptor_dim:
                raise ConfigurationError(
                    f"First stage dim {self.stage_dims[0]} must equal descriptor_dim {self.descriptor_dim}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d['stage_depths'] = list(self.stage_depths)
        d['stage_dims'] = list(self.stage_dims)
        return d

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'ModelConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"Unknown model config keys: {sorted(unknown)}")
        return cls(**values).validate()

    def architecture_hash(self) -> str:
        """Stable digest of the fields that determine parameter names and shapes."""
        d = self.to_dict()
        arch = {k: d[k] for k in ARCHITECTURE_FIELDS}
        if self.variant != 'paraformer_u':
            arch.pop('stage_depths')
            arch.pop('stage_dims')
            arch.pop('pooling')
        else:
            arch.pop('num_layers')
        payload = json.dumps(arch, sort_keys=True).encode('utf-8')
        return hashlib.sha256(payload).hexdigest()[:16]

    def with_overrides(self, **overrides) -> 'ModelConfig':
        return replace(self, **overrides).validate()

    @classmethod
    def defaults(cls, variant: str, descriptor_dim: int = FULL_SIZE_DESCRIPTOR_DIM,
                 **overrides) -> 'ModelConfig':
        """
        Full-size configuration of a variant at the given descriptor width.

        paraformer: L=9 parallel layers with Wave-PE; paraformer_u: stage depths
        {2,1,2,1,2} with widths scaled from {256,384,128,384,256};
        serial_baseline: 9 self + 9 cross layers with the MLP position encoder.
        """
        heads = overrides.pop('heads', 4)
        base: Dict[str, Any] = {'variant': variant, 'descriptor_dim': descriptor_dim, 'heads': heads}
        if variant == 'paraformer_u':
            stages = StageConfig.for_descriptor_dim(descriptor_dim, heads)
            base.update(stage_depths=stages.depths, stage_dims=stages.dims)
        elif variant == 'serial_baseline':
            base.update(pe='mlp')
        base.update(overrides)
        return cls(**base).validate()


# ablation presets: name -> (variant, overrides)
ABLATIONS: Dict[str, Tuple[str, Dict[str, Any]]] = {
    'serial_mlp_pe': ('serial_baseline', {'pe': 'mlp'}),
    'parallel_mlp_pe': ('paraformer', {'pe': 'mlp'}),
    'parallel_wave_pe': ('paraformer', {'pe': 'wave'}),
    'share_none': ('paraformer', {'share_qkv': False, 'share_merge': False, 'share_ffn': False}),
    'share_ffn': ('paraformer', {'share_qkv': False, 'share_merge': False, 'share_ffn': True}),
    'share_qkv': ('paraformer', {'share_qkv': True, 'share_merge': False, 'share_ffn': False}),
    'share_merge': ('paraformer', {'share_qkv': False, 'share_merge': True, 'share_ffn': False}),
    'share_qkv_merge': ('paraformer', {'share_qkv': True, 'share_merge': True, 'share_ffn': False}),
    'attn_sharing_off': ('paraformer', {'share_attn_weights': False}),
    'attn_sharing_on': ('paraformer', {'share_attn_weights': True}),
    'pool_random': ('paraformer_u', {'pooling': 'random'}),
    'pool_gpool': ('paraformer_u', {'pooling': 'gpool'}),
    'pool_attentional': ('paraformer_u', {'pooling': 'attentional'}),
}


def ablation_config(name: str, descriptor_dim: int = FULL_SIZE_DESCRIPTOR_DIM, **overrides) -> ModelConfig:
    if name not in ABLATIONS:
        raise ConfigurationError(f"Unknown ablation '{name}', expected one of {sorted(ABLATIONS)}")
    variant, preset = ABLATIONS[name]
    return ModelConfig.defaults(variant, descriptor_dim, **{**preset, **overrides})
