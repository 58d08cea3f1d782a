"""Attention primitives: multi-head self-attention, deformable attention,
and its multi-scale extension.

Deformable attention replaces the dense query-key similarity with a small
set of learned fractional sampling locations per query: each head samples
K points per pyramid level around the query's reference point and mixes
them with softmax weights predicted from the query itself. Sampling uses
zero-padded trilinear interpolation, so gradients flow to the value maps,
the offsets, the mixing logits, and (through the offset/logit heads) the
queries.

Reference points are normalized (z,y,x) in [0,1]^3; ``level_scale`` maps
them to a level's voxel-index space so that a token's own grid position is
recovered exactly. Offsets are expressed in voxel units of the target
level.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


@dataclass
class SelfAttentionParams:
    heads: int
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    def named(self, prefix: str):
        for name in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
            yield f"{prefix}.{name}", getattr(self, name)


def init_self_attention(dim: int, heads: int, rng: np.random.Generator,
                        dtype=np.float64) -> SelfAttentionParams:
    if dim % heads != 0:
        raise ConfigError(f"model width {dim} not divisible by head count {heads}")
    z = lambda n: Tensor(np.zeros(n, dtype=dtype), requires_grad=True)
    w = lambda: Tensor(xavier_uniform(rng, dim, dim, dtype), requires_grad=True)
    return SelfAttentionParams(heads, w(), z(dim), w(), z(dim), w(), z(dim), w(), z(dim))


def self_attention(q: Tensor, k: Tensor, v: Tensor, params: SelfAttentionParams) -> Tensor:
    """Scaled dot-product attention with per-head projections.

    q, k, v: (n, dim). Returns (n_q, dim).
    """
    if q.shape[1] != params.wq.shape[0]:
        raise DimensionError(f"query width {q.shape[1]} != projection width {params.wq.shape[0]}")
    if k.shape != v.shape:
        raise DimensionError(f"key/value shapes differ: {k.shape} vs {v.shape}")
    heads = params.heads
    dim = params.wq.shape[0]
    dk = dim // heads
    qp = T.add(T.matmul(q, params.wq), T.reshape(params.bq, (1, -1)))
    kp = T.add(T.matmul(k, params.wk), T.reshape(params.bk, (1, -1)))
    vp = T.add(T.matmul(v, params.wv), T.reshape(params.bv, (1, -1)))
    scale = 1.0 / np.sqrt(dk)
    outs = []
    for i in range(heads):
        qi = T.narrow(qp, 1, i * dk, dk)
        ki = T.narrow(kp, 1, i * dk, dk)
        vi = T.narrow(vp, 1, i * dk, dk)
        logits = T.mul(T.matmul(qi, T.transpose(ki)), scale)
        attn = T.softmax(logits, axis=-1)
        outs.append(T.matmul(attn, vi))
    cat = T.concat(outs, axis=1)
    return T.add(T.matmul(cat, params.wo), T.reshape(params.bo, (1, -1)))


@dataclass
class MSDAParams:
    heads: int
    levels: int
    points: int
    value_w: list  # per level (dim, dim)
    value_b: list
    out_w: Tensor
    out_b: Tensor
    offset_w: Tensor  # (dim, heads*levels*points*3)
    offset_b: Tensor
    logit_w: Tensor  # (dim, heads*levels*points)
    logit_b: Tensor

    def named(self, prefix: str):
        for l, (w, b) in enumerate(zip(self.value_w, self.value_b)):
            yield f"{prefix}.value{l}.w", w
            yield f"{prefix}.value{l}.b", b
        yield f"{prefix}.out.w", self.out_w
        yield f"{prefix}.out.b", self.out_b
        yield f"{prefix}.offset.w", self.offset_w
        yield f"{prefix}.offset.b", self.offset_b
        yield f"{prefix}.logit.w", self.logit_w
        yield f"{prefix}.logit.b", self.logit_b


def init_msda(dim: int, heads: int, levels: int, points: int, rng: np.random.Generator,
              dtype=np.float64) -> MSDAParams:
    """Offsets and mixing logits start at zero: samples sit on the reference
    point with uniform weights, a stable warm start."""
    if dim % heads != 0:
        raise ConfigError(f"model width {dim} not divisible by head count {heads}")
    if levels < 1:
        raise ConfigError("deformable attention needs at least one level")
    if points < 1:
        raise ConfigError("deformable attention needs at least one sample point")
    z = lambda shape: Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
    value_w = [Tensor(xavier_uniform(rng, dim, dim, dtype), requires_grad=True)
               for _ in range(levels)]
    value_b = [z(dim) for _ in range(levels)]
    return MSDAParams(
        heads=heads, levels=levels, points=points,
        value_w=value_w, value_b=value_b,
        out_w=Tensor(xavier_uniform(rng, dim, dim, dtype), requires_grad=True),
        out_b=z(dim),
        offset_w=z((dim, heads * levels * points * 3)),
        offset_b=z(heads * levels * points * 3),
        logit_w=z((dim, heads * levels * points)),
        logit_b=z(heads * levels * points),
    )


def level_scale(shape: tuple, dtype=np.float64) -> np.ndarray:
    """Diagonal map from normalized [0,1]^3 coords to a level's voxel space."""
    return np.asarray(shape, dtype=dtype)


def _head_value_volumes(tokens: Tensor, shape: tuple, w: Tensor, b: Tensor, heads: int):
    """Project tokens and reshape to per-head (dv, D, W, H) sampling volumes."""
    n, dim = tokens.shape
    d, wd, h = shape
    if n != d * wd * h:
        raise DimensionError(f"level token count {n} != grid size {d}x{wd}x{h}")
    dv = dim // heads
    proj = T.add(T.matmul(tokens, w), T.reshape(b, (1, -1)))  # (n, dim)
    vols = T.reshape(T.transpose(proj), (heads, dv, d, wd, h))
    return [T.narrow(vols, 0, i, 1).reshape(dv, d, wd, h) for i in range(heads)]


def _sample_level(vol: Tensor, ref: Tensor, offsets: Tensor, shape: tuple, points: int) -> Tensor:
    """Sample one head's value volume at ref*scale - 0.5 + offsets -> (dv, n, K)."""
    n = ref.shape[0]
    scale = Tensor(level_scale(shape, vol.dtype))
    base = T.sub(T.mul(ref, scale), 0.5)  # (n,3) voxel-space centers
    pts = T.add(T.reshape(base, (n, 1, 3)), offsets)  # (n,K,3)
    sampled = T.trilinear_sample(vol, T.reshape(pts, (n * points, 3)))
    return T.reshape(sampled, (vol.shape[0], n, points))


def msda(queries: Tensor, ref_points: Tensor, level_tokens: list, level_shapes: list,
         params: MSDAParams) -> Tensor:
    """Multi-scale deformable attention.

    queries: (n, dim); ref_points: (n, 3) normalized; level_tokens[l]:
    (n_l, dim) flattened row-major from level_shapes[l]. Mixing weights are
    softmax-normalized jointly over all levels*points samples of each
    (query, head). Returns (n, dim).
    """
    if len(level_tokens) != params.levels or len(level_shapes) != params.levels:
        raise ConfigError(f"expected {params.levels} levels, got {len(level_tokens)}")
    if params.levels == 0:
        raise ConfigError("empty level set")
    n, dim = queries.shape
    heads, levels, points = params.heads, params.levels, params.points
    dv = dim // heads

    off = T.add(T.matmul(queries, params.offset_w), T.reshape(params.offset_b, (1, -1)))
    off = T.reshape(off, (n, heads, levels, points, 3))
    logits = T.add(T.matmul(queries, params.logit_w), T.reshape(params.logit_b, (1, -1)))
    weights = T.softmax(T.reshape(logits, (n, heads, levels * points)), axis=-1)
    weights = T.reshape(weights, (n, heads, levels, points))

    level_vols = [
        _head_value_volumes(level_tokens[l], level_shapes[l],
                            params.value_w[l], params.value_b[l], heads)
        for l in range(levels)
    ]

    head_outs = []
    for i in range(heads):
        acc = None
        for l in range(levels):
            off_il = T.narrow(T.narrow(off, 1, i, 1), 2, l, 1).reshape(n, points, 3)
            w_il = T.narrow(T.narrow(weights, 1, i, 1), 2, l, 1).reshape(1, n, points)
            sampled = _sample_level(level_vols[l][i], ref_points, off_il,
                                    level_shapes[l], points)
            term = T.tsum(T.mul(sampled, w_il), axis=2)  # (dv, n)
            acc = term if acc is None else T.add(acc, term)
        head_outs.append(acc)
    cat = T.transpose(T.concat(head_outs, axis=0))  # (n, heads*dv)
    return T.add(T.matmul(cat, params.out_w), T.reshape(params.out_b, (1, -1)))


def deformable_attention(queries: Tensor, ref_points: Tensor, tokens: Tensor,
                         shape: tuple, params: MSDAParams) -> Tensor:
    """Single-scale deformable attention; the L=1 specialization of msda."""
    if params.levels != 1:
        raise ConfigError("deformable_attention expects single-level parameters")
    n, dim = queries.shape
    heads, points = params.heads, params.points

    off = T.add(T.matmul(queries, params.offset_w), T.reshape(params.offset_b, (1, -1)))
    off = T.reshape(off, (n, heads, 1, points, 3))
    logits = T.add(T.matmul(queries, params.logit_w), T.reshape(params.logit_b, (1, -1)))
    weights = T.softmax(T.reshape(logits, (n, heads, points)), axis=-1)
    weights = T.reshape(weights, (n, heads, 1, points))

    vols = _head_value_volumes(tokens, shape, params.value_w[0], params.value_b[0], heads)
    head_outs = []
    for i in range(heads):
        off_i = T.narrow(T.narrow(off, 1, i, 1), 2, 0, 1).reshape(n, points, 3)
        w_i = T.narrow(T.narrow(weights, 1, i, 1), 2, 0, 1).reshape(1, n, points)
        sampled = _sample_level(vols[i], ref_points, off_i, shape, points)
        head_outs.append(T.tsum(T.mul(sampled, w_i), axis=2))
    cat = T.transpose(T.concat(head_outs, axis=0))
    return T.add(T.matmul(cat, params.out_w), T.reshape(params.out_b, (1, -1)))
