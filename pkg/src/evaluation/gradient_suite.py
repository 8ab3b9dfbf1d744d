"""
Finite-difference suite behind the `gradcheck` command.

Every parameterized op and module is re-run in float64 against central
differences, then the toy model (M=N=6, C=8, L=2, T=20) is checked end to end.
Outputs are weighted by a fixed random tensor before summation so that
normalizing ops (softmax, Sinkhorn) do not have identically zero gradients.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.data.keypoints import KeypointSet, normalize_rows
from src.data.homography import Homography
from src.data.synthetic import PairSample
from src.models.config import ModelConfig
from src.models.param_store import ParamStore
from src.models.paraformer import ParaFormer, build
from src.nn.attention import ParallelAttentionLayer, SerialLayerPair
from src.nn.layers import MLP
from src.nn.matcher import matching_loss, sinkhorn
from src.nn.unet import attentional_pool, gpool, unpool
from src.nn.wave_pe import WavePositionEncoder
from src.tensor import GradCheckResult, Tensor, check_gradients, ops
from src.tensor.gradcheck import DEFAULT_ATOL

logger = logging.getLogger('ParaFormer')

SMOOTH_EPS = 1e-3
# ReLU kinks and top-k selection must not be crossed by a perturbation
KINK_EPS = 1e-6
DEFAULT_TOLERANCE = 1e-3
DEFAULT_SEEDS = 10
MAX_ENTRIES = 6

TOY_POINTS = 6
TOY_DIM = 8
TOY_LAYERS = 2
TOY_ITERATIONS = 20

# (forward, leaves to differentiate, eps)
Case = Tuple[Callable[[], Tensor], Dict[str, Tensor], float]


@dataclass
class SuiteCheck:
    name: str
    seed: int
    results: List[GradCheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def max_rel_error(self) -> float:
        return max((r.max_rel_error for r in self.results), default=0.0)

    @property
    def max_abs_error(self) -> float:
        return max((r.max_abs_error for r in self.results), default=0.0)


def _leaf(rng: np.random.Generator, *shape: int, away_from_zero: bool = False) -> Tensor:
    values = rng.uniform(-1.0, 1.0, size=shape)
    if away_from_zero:
        values = np.sign(values) * (0.2 + 0.8 * np.abs(values))
    return Tensor(values, requires_grad=True, dtype=np.float64)


def _weighted(fn: Callable[[], Tensor], rng: np.random.Generator) -> Callable[[], Tensor]:
    """fn() ⊙ W for a W drawn once, so the checked scalar is Σ W ⊙ fn()."""
    weights = {}

    def run() -> Tensor:
        out = fn()
        if 'w' not in weights:
            weights['w'] = Tensor(rng.uniform(0.5, 1.5, size=out.shape), dtype=np.float64)
        return ops.mul(out, weights['w'])

    return run


def _float64_store(build_module: Callable[[ParamStore, np.random.Generator], object],
                   rng: np.random.Generator) -> Tuple[object, ParamStore]:
    """Create a module's parameters, then rebind it to a perturbed float64 copy of them."""
    store = ParamStore()
    build_module(store, rng)
    store64 = store.astype(np.float64)
    module = build_module(store64, None)
    store64.perturb(rng)
    return module, store64


def _params(store: ParamStore) -> Dict[str, Tensor]:
    return dict(store.items())


def op_cases(rng: np.random.Generator) -> Dict[str, Case]:
    """One case per differentiable op or module, drawn from `rng`."""
    cases: Dict[str, Case] = {}

    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 5)
    cases['matmul'] = (lambda: ops.matmul(a, b), {'a': a, 'b': b}, SMOOTH_EPS)

    qa, kb = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 3)
    cases['batched_matmul'] = (lambda: ops.matmul(qa, kb), {'a': qa, 'b': kb}, SMOOTH_EPS)

    s = _leaf(rng, 2, 4, 5)
    cases['softmax_rows'] = (lambda: ops.softmax_rows(s, scale=0.5), {'a': s}, SMOOTH_EPS)

    l0 = _leaf(rng, 4, 5)
    cases['logsumexp'] = (lambda: ops.concat([ops.transpose(ops.logsumexp(l0, axis=1)),
                                              ops.logsumexp(l0, axis=0)], axis=1),
                          {'a': l0}, SMOOTH_EPS)

    e = _leaf(rng, 3, 4)
    cases['sigmoid'] = (lambda: ops.sigmoid(e), {'a': e}, SMOOTH_EPS)
    cases['sin_cos'] = (lambda: ops.mul(ops.sin(e), ops.cos(e)), {'a': e}, SMOOTH_EPS)

    r = _leaf(rng, 3, 4, away_from_zero=True)
    cases['relu'] = (lambda: ops.relu(r), {'a': r}, KINK_EPS)

    c1, c2 = _leaf(rng, 3, 2), _leaf(rng, 3, 4)
    cases['concat'] = (lambda: ops.concat([c1, c2], axis=1), {'a': c1, 'b': c2}, SMOOTH_EPS)

    g = _leaf(rng, 5, 3)
    cases['gather_rows'] = (lambda: ops.gather_rows(g, [4, 0, 4, 2]), {'a': g}, SMOOTH_EPS)
    cases['gather_elements'] = (lambda: ops.gather_elements(g, [0, 3, 3], [2, 1, 1]),
                                {'a': g}, SMOOTH_EPS)
    sc = _leaf(rng, 2, 3)
    cases['scatter_rows'] = (lambda: ops.scatter_rows(sc, [3, 1], 5), {'a': sc}, SMOOTH_EPS)

    w = _leaf(rng, 4, 1, away_from_zero=True)
    cases['l2_normalize'] = (lambda: ops.l2_normalize(w), {'a': w}, SMOOTH_EPS)

    h = _leaf(rng, 4, 8)
    cases['heads'] = (lambda: ops.merge_heads(ops.mul(ops.split_heads(h, 2), ops.split_heads(h, 2))),
                      {'a': h}, SMOOTH_EPS)

    scores, alpha = _leaf(rng, 4, 5), _leaf(rng, 1, 1)
    cases['sinkhorn'] = (lambda: sinkhorn(scores, alpha, 50).log_P,
                         {'scores': scores, 'alpha': alpha}, SMOOTH_EPS)

    ls, la = _leaf(rng, 4, 5), _leaf(rng, 1, 1)
    cases['matching_loss'] = (
        lambda: matching_loss(sinkhorn(ls, la, 20), np.array([[0, 1], [2, 3]]),
                              np.array([1, 3]), np.array([0, 2, 4])),
        {'scores': ls, 'alpha': la}, SMOOTH_EPS)

    mlp, store = _float64_store(lambda st, g_: MLP(st, 'mlp', [4, 6, 3], g_), rng)
    mx = _leaf(rng, 5, 4)
    cases['mlp'] = (lambda: mlp(mx), {'x': mx, **_params(store)}, KINK_EPS)

    pe, store = _float64_store(lambda st, g_: WavePositionEncoder(st, 'pe', TOY_DIM, g_), rng)
    d, p = _leaf(rng, 5, TOY_DIM), _leaf(rng, 5, 3)
    cases['wave_pe'] = (lambda: pe(d, p), {'descriptors': d, **_params(store)}, KINK_EPS)

    for share in (True, False):
        layer, store = _float64_store(
            lambda st, g_, share=share: ParallelAttentionLayer(
                st, 'layer', TOY_DIM, 2, share_qkv=share, share_merge=share,
                share_attn_weights=share, rng=g_), rng)
        x, y = _leaf(rng, 5, TOY_DIM), _leaf(rng, 4, TOY_DIM)
        cases[f"parallel_layer_{'shared' if share else 'unshared'}"] = (
            lambda layer=layer, x=x, y=y: ops.concat(list(layer(x, y)[:2]), axis=0),
            {'x': x, 'y': y, **_params(store)}, KINK_EPS)

    pair, store = _float64_store(lambda st, g_: SerialLayerPair(st, 'pair', TOY_DIM, 2, g_), rng)
    sx, sy = _leaf(rng, 4, TOY_DIM), _leaf(rng, 5, TOY_DIM)
    cases['serial_pair'] = (lambda: ops.concat(list(pair(sx, sy)[:2]), axis=0),
                            {'x': sx, 'y': sy, **_params(store)}, KINK_EPS)

    px = _leaf(rng, 6, 4)
    raw = rng.uniform(0.1, 1.0, size=(6, 6))
    pm = Tensor(raw / raw.sum(axis=1, keepdims=True), requires_grad=True, dtype=np.float64)
    cases['attentional_pool'] = (lambda: attentional_pool(px, pm, 3)[0],
                                 {'x': px, 'map': pm}, KINK_EPS)

    gv = _leaf(rng, 4, 1, away_from_zero=True)
    cases['gpool'] = (lambda: gpool(px, gv, 3)[0], {'x': px, 'vector': gv}, KINK_EPS)

    ux = _leaf(rng, 3, 4)
    _, record = attentional_pool(px, pm, 3)
    cases['unpool'] = (lambda: unpool(ux, record), {'x': ux}, SMOOTH_EPS)
    return cases


def toy_config(variant: str = 'paraformer') -> ModelConfig:
    if variant == 'paraformer_u':
        return ModelConfig.defaults('paraformer_u', TOY_DIM, heads=2, stage_depths=(1, 1, 1, 1, 1),
                                    sinkhorn_iterations=TOY_ITERATIONS)
    return ModelConfig.defaults(variant, TOY_DIM, heads=2, num_layers=TOY_LAYERS,
                                sinkhorn_iterations=TOY_ITERATIONS)


def toy_pair(rng: np.random.Generator, points: int = TOY_POINTS, dim: int = TOY_DIM) -> PairSample:
    """A labelled pair without geometric meaning; four matches, the rest unmatched."""
    size = (64, 48)

    def keypoints() -> KeypointSet:
        positions = np.column_stack([rng.uniform(0, size[0] - 1, points),
                                     rng.uniform(0, size[1] - 1, points),
                                     rng.uniform(0, 1, points)])
        return KeypointSet(positions, normalize_rows(rng.standard_normal((points, dim))), size)

    perm = rng.permutation(points)
    gt = np.stack([np.arange(4), perm[:4]], axis=1)
    return PairSample(keypoints(), keypoints(), Homography(np.eye(3)), gt,
                      np.arange(4, points), np.sort(perm[4:]))


def model_case(seed: int, variant: str = 'paraformer') -> Tuple[Case, ParaFormer]:
    rng = np.random.default_rng(seed)
    cfg = toy_config(variant)
    store, model = build(cfg, seed)
    model64 = model.with_store(store.astype(np.float64))
    model64.store.perturb(rng)
    sample = toy_pair(rng)
    return (lambda: model64.loss(sample), _params(model64.store), KINK_EPS), model64


def run_suite(seeds: int = DEFAULT_SEEDS, tolerance: float = DEFAULT_TOLERANCE,
              include_model: bool = True, atol: float = DEFAULT_ATOL,
              variants: Sequence[str] = ('paraformer', 'paraformer_u', 'serial_baseline'),
              op_seeds: Optional[int] = None) -> List[SuiteCheck]:
    """
    Run every op case and the toy models.

    Op cases run over `op_seeds` seeds (twice `seeds` when None), the toy paraformer
    over `seeds` seeds and the other variants over the first one.
    """
    op_seeds = 2 * seeds if op_seeds is None else op_seeds
    checks: List[SuiteCheck] = []
    for seed in range(max(seeds, op_seeds)):
        rng = np.random.default_rng(seed)
        if seed < op_seeds:
            for name, (fn, tensors, eps) in op_cases(rng).items():
                results = check_gradients(_weighted(fn, rng), tensors, eps=eps, tolerance=tolerance,
                                          atol=atol, max_entries=MAX_ENTRIES, rng=rng)
                checks.append(SuiteCheck(name, seed, results))
        if not include_model or seed >= seeds:
            continue
        for variant in variants:
            if seed > 0 and variant != 'paraformer':
                continue
            (fn, tensors, eps), _ = model_case(seed, variant)
            results = check_gradients(fn, tensors, eps=eps, tolerance=tolerance, atol=atol,
                                      max_entries=MAX_ENTRIES, rng=np.random.default_rng(seed))
            checks.append(SuiteCheck(f"model_{variant}", seed, results))
        logger.debug(f"Gradient suite seed {seed} done")

    failed = [c for c in checks if not c.passed]
    logger.info(f"Gradient suite: {len(checks) - len(failed)}/{len(checks)} checks passed")
    for c in failed:
        logger.error(f"Gradient check {c.name} (seed {c.seed}) failed: max rel err {c.max_rel_error:.3e}, "
                     f"max abs err {c.max_abs_error:.3e}")
    return checks
