"""
Analytic operation counts for every model variant.

Conventions:
    matmul m×k · k×n          2·m·k·n
    linear layer (m rows)     2·m·in·out + m·out (bias)
    ReLU, add, mul, sin, cos, sigmoid, scale   1 per element
    softmax (scale included)  5 per element
    log-sum-exp               5 per element
Reshapes, transposes, concatenations, gathers and scatters are free. The counts
follow the forward passes in `src.nn` operation by operation.
"""

import csv
import io
import logging
from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterable, List, Sequence

from src.models.config import ModelConfig, StageConfig
from src.nn.wave_pe import MLP_PE_HIDDEN

logger = logging.getLogger('ParaFormer')

SOFTMAX_OPS = 5
LOGSUMEXP_OPS = 5
DEFAULT_KEYPOINTS = (512, 1024, 2048)


@dataclass
class FlopsBreakdown:
    """Per-component operation counts; attention_rounds counts sequential attention steps."""
    pe: int = 0
    projections: int = 0
    attention_logits: int = 0
    attention_softmax: int = 0
    attention_values: int = 0
    fusion: int = 0
    pooling: int = 0
    sinkhorn: int = 0
    attention_rounds: int = 0

    @property
    def total(self) -> int:
        return (self.pe + self.projections + self.attention_logits + self.attention_softmax
                + self.attention_values + self.fusion + self.pooling + self.sinkhorn)

    def __add__(self, other: 'FlopsBreakdown') -> 'FlopsBreakdown':
        return FlopsBreakdown(**{f.name: getattr(self, f.name) + getattr(other, f.name)
                                 for f in fields(self)})

    def to_dict(self) -> Dict[str, int]:
        d = asdict(self)
        d['total'] = self.total
        return d


def linear_flops(m: int, in_dim: int, out_dim: int, bias: bool = True) -> int:
    return 2 * m * in_dim * out_dim + (m * out_dim if bias else 0)


def mlp_flops(m: int, sizes: Sequence[int]) -> int:
    """Linear layers plus a ReLU after every hidden layer."""
    total = 0
    for i in range(len(sizes) - 1):
        total += linear_flops(m, sizes[i], sizes[i + 1])
        if i < len(sizes) - 2:
            total += m * sizes[i + 1]
    return total


def fusion_flops(m: int, c: int) -> int:
    """Two-layer fusion MLP 2C→2C→C plus the residual add."""
    return mlp_flops(m, [2 * c, 2 * c, c]) + m * c


def wave_pe_flops(m: int, c: int) -> int:
    amplitude = mlp_flops(m, [c, c, c])
    phase = mlp_flops(m, [3, c, c])
    euler = 2 * m * c + 2 * m * c  # cos, sin, two products
    return amplitude + phase + euler + mlp_flops(m, [2 * c, 2 * c, c]) + m * c


def mlp_pe_flops(m: int, c: int) -> int:
    return mlp_flops(m, [3, *MLP_PE_HIDDEN, c]) + m * c


def pe_flops(kind: str, m: int, c: int) -> int:
    if kind == 'wave':
        return wave_pe_flops(m, c)
    if kind == 'mlp':
        return mlp_pe_flops(m, c)
    return 0


def parallel_layer_flops(m: int, n: int, c: int, heads: int,
                         share_qkv: bool = True, share_attn_weights: bool = True) -> FlopsBreakdown:
    """One parallel layer over m and n points of width c."""
    proj_sets = 1 if share_qkv else 2
    projections = proj_sets * 3 * (linear_flops(m, c, c) + linear_flops(n, c, c))
    projections += 2 * (linear_flops(m, c, c) + linear_flops(n, c, c))  # four head merges
    cross_logits = 2 * m * n * c * (1 if share_attn_weights else 2)
    return FlopsBreakdown(
        projections=projections,
        attention_logits=2 * m * m * c + 2 * n * n * c + cross_logits,
        attention_softmax=SOFTMAX_OPS * heads * (m * m + n * n + 2 * m * n),
        attention_values=2 * c * (m * m + n * n + 2 * m * n),
        fusion=fusion_flops(m, c) + fusion_flops(n, c),
        attention_rounds=1,
    )


def serial_pair_flops(m: int, n: int, c: int, heads: int) -> FlopsBreakdown:
    """One self layer then one cross layer, each with its own attention round."""
    per_image = 4 * (linear_flops(m, c, c) + linear_flops(n, c, c))  # Q, K, V, merge
    return FlopsBreakdown(
        projections=2 * per_image,
        attention_logits=2 * c * (m * m + n * n + 2 * m * n),
        attention_softmax=SOFTMAX_OPS * heads * (m * m + n * n + 2 * m * n),
        attention_values=2 * c * (m * m + n * n + 2 * m * n),
        fusion=2 * (fusion_flops(m, c) + fusion_flops(n, c)),
        attention_rounds=2,
    )


def pool_flops(kind: str, n: int, k: int, c_in: int, c_out: int, heads: int) -> int:
    """Scoring, selection gate and projection of one image at one pooling level."""
    proj = linear_flops(k, c_in, c_out)
    if kind == 'attentional':
        # head average, column sums, sigmoid, gating product
        return heads * n * n + n * n + k + proj + k * c_out
    if kind == 'gpool':
        return 3 * c_in + 2 * n * c_in + k + proj + k * c_out
    return proj


def unpool_flops(k: int, n_prev: int, c_in: int, c_out: int) -> int:
    """Projection of the kept rows plus the skip add over all n_prev rows."""
    return linear_flops(k, c_in, c_out) + n_prev * c_out


def sinkhorn_flops(m: int, n: int, c: int, iterations: int) -> int:
    """Score matrix plus `iterations` row and column log-sum-exp passes over (m+1)(n+1)."""
    cells = (m + 1) * (n + 1)
    scores = 2 * m * n * c + m * n
    per_iteration = 2 * (cells + LOGSUMEXP_OPS * cells) + (m + 1) + (n + 1)
    return scores + iterations * per_iteration + 3 * cells


def _unet_flops(cfg: ModelConfig, m: int, n: int) -> FlopsBreakdown:
    stages: StageConfig = cfg.stages
    counts_x, counts_y = StageConfig.point_counts(m), StageConfig.point_counts(n)
    dims = stages.dims
    out = FlopsBreakdown()
    for s, depth in enumerate(stages.depths):
        layer = parallel_layer_flops(counts_x[s], counts_y[s], dims[s], cfg.heads,
                                     cfg.share_qkv, cfg.share_attn_weights)
        for _ in range(depth):
            out = out + layer
    pooling = 0
    for level in range(2):
        for counts in (counts_x, counts_y):
            pooling += pool_flops(cfg.pooling, counts[level], counts[level + 1],
                                  dims[level], dims[level + 1], cfg.heads)
            # unpool level feeds stage 3 + level from stage 2 + level
            pooling += unpool_flops(counts[2 + level], counts[3 + level], dims[2 + level], dims[3 + level])
    out.pooling = pooling
    return out


def count_flops(cfg: ModelConfig, m: int, n: int) -> FlopsBreakdown:
    """
    Operation count of one forward pass on an m × n keypoint pair.

    Returns an all-zero breakdown when either image has no keypoints.
    """
    if m <= 0 or n <= 0:
        return FlopsBreakdown()
    c = cfg.descriptor_dim
    if cfg.variant == 'paraformer_u':
        body = _unet_flops(cfg, m, n)
    else:
        body = FlopsBreakdown()
        for _ in range(cfg.num_layers):
            if cfg.variant == 'serial_baseline':
                body = body + serial_pair_flops(m, n, c, cfg.heads)
            else:
                body = body + parallel_layer_flops(m, n, c, cfg.heads, cfg.share_qkv,
                                                   cfg.share_attn_weights)
    body.pe = pe_flops(cfg.pe, m, c) + pe_flops(cfg.pe, n, c)
    body.sinkhorn = sinkhorn_flops(m, n, c, cfg.sinkhorn_iterations)
    return body


def flops_table(models: Dict[str, ModelConfig], keypoints: Iterable[int] = DEFAULT_KEYPOINTS,
                reference: str = 'serial_baseline') -> List[Dict[str, object]]:
    """
    One record per (model, keypoint count) with its breakdown and its ratio to `reference`.

    The ratio is omitted when the reference model is not in `models`.
    """
    rows = []
    for k in keypoints:
        ref_total = count_flops(models[reference], k, k).total if reference in models else None
        for name, cfg in models.items():
            breakdown = count_flops(cfg, k, k)
            row: Dict[str, object] = {'model': name, 'keypoints': k}
            row.update(breakdown.to_dict())
            row['gflops'] = breakdown.total / 1e9
            if ref_total:
                row['ratio'] = breakdown.total / ref_total
            rows.append(row)
    return rows


def render_table(rows: List[Dict[str, object]], columns: Sequence[str]) -> str:
    """Aligned plain-text table."""
    def cell(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    cells = [[cell(r.get(col, '')) for col in columns] for r in rows]
    widths = [max(len(col), *(len(c[i]) for c in cells)) if cells else len(col)
              for i, col in enumerate(columns)]
    lines = ['  '.join(col.rjust(w) for col, w in zip(columns, widths))]
    lines.append('  '.join('-' * w for w in widths))
    lines.extend('  '.join(c.rjust(w) for c, w in zip(row, widths)) for row in cells)
    return '\n'.join(lines)


def render_records(rows: List[Dict[str, object]], columns: Sequence[str], sep: str = ',') -> str:
    """Delimiter-separated records with a header line, for plotting; fields are quoted as needed."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, delimiter=sep, lineterminator='\n')
    writer.writerow(columns)
    writer.writerows([r.get(col, '') for col in columns] for r in rows)
    return buffer.getvalue().rstrip('\n')
