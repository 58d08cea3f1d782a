"""Transformer kernel generator: deformable encoder over pyramid tokens and
a query decoder that turns learned per-task embeddings into output embeddings.

Residual branches are scaled by depth-conditioned constants (deep-norm
style) before layer normalization; with both constants at 1 the layers
reduce to standard post-LN blocks. Pyramid levels are tokenized finest
first; the last level is the backbone bottleneck, whose encoded tokens are
also reshaped back to a volume for decoder-side fusion.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import (MSDAParams, SelfAttentionParams, init_msda,
                        init_self_attention, msda, self_attention, xavier_uniform)
from .errors import ConfigError, DimensionError
from .posenc import encode_positions, grid_reference_points
from .tensor import Tensor


def encoder_residual_scale(enc_layers: int, dec_layers: int) -> float:
    """Residual multiplier for encoder layers, conditioned on both depths."""
    if enc_layers < 1 or dec_layers < 1:
        raise ConfigError("residual scale defined for at least one encoder and decoder layer")
    return 0.81 * (enc_layers ** 4 * dec_layers) ** (1.0 / 16.0)


def decoder_residual_scale(dec_layers: int) -> float:
    """Residual multiplier for decoder layers."""
    if dec_layers < 1:
        raise ConfigError("residual scale defined for at least one decoder layer")
    return (3.0 * dec_layers) ** 0.25


def _normal_param(rng, shape, dtype, sigma=0.02):
    return Tensor(rng.normal(0.0, sigma, size=shape).astype(dtype), requires_grad=True)


@dataclass
class AffineLN:
    gamma: Tensor
    beta: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        y = T.layer_norm(x, axis=-1)
        return T.add(T.mul(y, T.reshape(self.gamma, (1, -1))), T.reshape(self.beta, (1, -1)))

    def named(self, prefix):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta


def _init_ln(dim, dtype):
    return AffineLN(Tensor(np.ones(dim, dtype=dtype), requires_grad=True),
                    Tensor(np.zeros(dim, dtype=dtype), requires_grad=True))


@dataclass
class FFN:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(T.add(T.matmul(x, self.w1), T.reshape(self.b1, (1, -1))))
        return T.add(T.matmul(h, self.w2), T.reshape(self.b2, (1, -1)))

    def named(self, prefix):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2


def _init_ffn(dim, hidden, rng, dtype):
    return FFN(Tensor(xavier_uniform(rng, dim, hidden, dtype), requires_grad=True),
               Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True),
               Tensor(xavier_uniform(rng, hidden, dim, dtype), requires_grad=True),
               Tensor(np.zeros(dim, dtype=dtype), requires_grad=True))


@dataclass
class EncoderLayer:
    attn: MSDAParams
    ln1: AffineLN
    ffn: FFN
    ln2: AffineLN

    def named(self, prefix):
        yield from self.attn.named(f"{prefix}.attn")
        yield from self.ln1.named(f"{prefix}.ln1")
        yield from self.ffn.named(f"{prefix}.ffn")
        yield from self.ln2.named(f"{prefix}.ln2")


@dataclass
class DecoderLayer:
    self_attn: SelfAttentionParams
    ln1: AffineLN
    cross_attn: MSDAParams
    ln2: AffineLN
    ffn: FFN
    ln3: AffineLN

    def named(self, prefix):
        yield from self.self_attn.named(f"{prefix}.self_attn")
        yield from self.ln1.named(f"{prefix}.ln1")
        yield from self.cross_attn.named(f"{prefix}.cross_attn")
        yield from self.ln2.named(f"{prefix}.ln2")
        yield from self.ffn.named(f"{prefix}.ffn")
        yield from self.ln3.named(f"{prefix}.ln3")


def encoder_layer_forward(tokens: Tensor, pos: Tensor, level_sizes: list,
                          level_shapes: list, refs: Tensor, layer: EncoderLayer,
                          alpha: float) -> Tensor:
    """One encoder layer over the level-concatenated token sequence.

    Queries carry positional (+level) embeddings; sampled values do not.
    """
    if tokens.shape != pos.shape:
        raise DimensionError(f"token/positional shapes differ: {tokens.shape} vs {pos.shape}")
    q = T.add(tokens, pos)
    offsets = np.cumsum([0] + level_sizes)
    level_tokens = [T.narrow(tokens, 0, offsets[i], level_sizes[i])
                    for i in range(len(level_sizes))]
    attn = msda(q, refs, level_tokens, level_shapes, layer.attn)
    z1 = layer.ln1(T.add(attn, T.mul(tokens, alpha)))
    z2 = layer.ln2(T.add(layer.ffn(z1), T.mul(z1, alpha)))
    return z2


def decoder_layer_forward(state: Tensor, query_embed: Tensor, memory_tokens: list,
                          memory_shapes: list, dec_refs: Tensor, layer: DecoderLayer,
                          alpha: float) -> Tensor:
    """One decoder layer: query self-attention, cross-attention into memory, FFN."""
    if state.shape != query_embed.shape:
        raise ConfigError(f"decoder state {state.shape} does not match query embeddings "
                          f"{query_embed.shape}")
    qk = T.add(state, query_embed)
    t1 = layer.ln1(T.add(self_attention(qk, qk, state, layer.self_attn),
                         T.mul(state, alpha)))
    q2 = T.add(t1, query_embed)
    cross = msda(q2, dec_refs, memory_tokens, memory_shapes, layer.cross_attn)
    t2 = layer.ln2(T.add(cross, T.mul(t1, alpha)))
    t3 = layer.ln3(T.add(layer.ffn(t2), T.mul(t2, alpha)))
    return t3


class KernelGenerator:
    """Maps a feature pyramid to per-task output embeddings plus a fused volume.

    The top ``levels`` pyramid entries (the deepest ones) are projected to
    the model width, flattened, and encoded. Learned task queries are then
    decoded against the encoded memory. ``run`` also returns the bottleneck
    level of the memory reshaped onto its source grid for backbone fusion.
    """

    def __init__(self, level_channels: list, dim: int, heads: int, enc_layers: int,
                 dec_layers: int, points: int, num_tasks: int, ffn_hidden: int,
                 rng: np.random.Generator, dtype=np.float64):
        if dim % 6 != 0:
            raise ConfigError(f"model width must be divisible by 6, got {dim}")
        if dim % heads != 0:
            raise ConfigError(f"model width {dim} not divisible by heads {heads}")
        self.levels = len(level_channels)
        self.dim = dim
        self.heads = heads
        self.enc_layers = enc_layers
        self.dec_layers = dec_layers
        self.points = points
        self.num_tasks = num_tasks
        self.dtype = np.dtype(dtype)
        self.alpha_enc = (encoder_residual_scale(enc_layers, max(dec_layers, 1))
                          if enc_layers >= 1 else 1.0)
        self.alpha_dec = decoder_residual_scale(dec_layers) if dec_layers >= 1 else 1.0

        self.token_w = [Tensor(xavier_uniform(rng, dim, c, dtype), requires_grad=True)
                        for c in level_channels]
        self.token_b = [Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
                        for _ in level_channels]
        self.level_embed = _normal_param(rng, (self.levels, dim), dtype)
        self.encoder = [EncoderLayer(init_msda(dim, heads, self.levels, points, rng, dtype),
                                     _init_ln(dim, dtype),
                                     _init_ffn(dim, ffn_hidden, rng, dtype),
                                     _init_ln(dim, dtype))
                        for _ in range(enc_layers)]
        self.decoder = [DecoderLayer(init_self_attention(dim, heads, rng, dtype),
                                     _init_ln(dim, dtype),
                                     init_msda(dim, heads, self.levels, points, rng, dtype),
                                     _init_ln(dim, dtype),
                                     _init_ffn(dim, ffn_hidden, rng, dtype),
                                     _init_ln(dim, dtype))
                        for _ in range(dec_layers)]
        self.query_embed = _normal_param(rng, (num_tasks, dim), dtype)
        self.query_state = _normal_param(rng, (num_tasks, dim), dtype)
        self.ref_w = Tensor(xavier_uniform(rng, dim, 3, dtype), requires_grad=True)
        self.ref_b = Tensor(np.zeros(3, dtype=dtype), requires_grad=True)

        self._grid_cache: dict = {}

    def named_params(self, prefix="generator"):
        for l in range(self.levels):
            yield f"{prefix}.token{l}.w", self.token_w[l]
            yield f"{prefix}.token{l}.b", self.token_b[l]
        yield f"{prefix}.level_embed", self.level_embed
        for i, layer in enumerate(self.encoder):
            yield from layer.named(f"{prefix}.enc{i}")
        for i, layer in enumerate(self.decoder):
            yield from layer.named(f"{prefix}.dec{i}")
        yield f"{prefix}.query_embed", self.query_embed
        yield f"{prefix}.query_state", self.query_state
        yield f"{prefix}.ref.w", self.ref_w
        yield f"{prefix}.ref.b", self.ref_b

    def _grid_constants(self, shapes: tuple):
        """Positional tables and reference points for a tuple of level shapes."""
        cached = self._grid_cache.get(shapes)
        if cached is None:
            pos = [Tensor(encode_positions(*s, self.dim, dtype=self.dtype)) for s in shapes]
            refs = Tensor(np.concatenate([grid_reference_points(*s) for s in shapes],
                                         axis=0).astype(self.dtype))
            cached = (pos, refs)
            self._grid_cache[shapes] = cached
        return cached

    def run(self, pyramid: list):
        """Encode the deepest ``levels`` pyramid entries and decode task queries.

        pyramid: list of (C,D,W,H) tensors, finest first. Returns
        (memory tokens (n,dim), per-task output embeddings (M,dim),
        bottleneck memory volume (dim,Dd,Wd,Hd)).
        """
        if len(pyramid) < self.levels:
            raise ConfigError(f"pyramid has {len(pyramid)} levels; generator needs {self.levels}")
        vols = pyramid[len(pyramid) - self.levels:]
        shapes = tuple(v.shape[1:] for v in vols)
        sizes = [int(np.prod(s)) for s in shapes]
        pos_tables, refs = self._grid_constants(shapes)

        tokens = []
        pos_parts = []
        for l, vol in enumerate(vols):
            proj = T.conv3d_1x1(vol, self.token_w[l], self.token_b[l])
            tokens.append(T.transpose(T.reshape(proj, (self.dim, sizes[l]))))
            lvl = T.narrow(self.level_embed, 0, l, 1)
            pos_parts.append(T.add(pos_tables[l], lvl))
        memory = T.concat(tokens, axis=0)
        pos = T.concat(pos_parts, axis=0)

        for layer in self.encoder:
            memory = encoder_layer_forward(memory, pos, sizes, list(shapes), refs,
                                           layer, self.alpha_enc)

        offsets = np.cumsum([0] + sizes)
        memory_levels = [T.narrow(memory, 0, offsets[i], sizes[i])
                         for i in range(self.levels)]
        dec_refs = T.sigmoid(T.add(T.matmul(self.query_embed, self.ref_w),
                                   T.reshape(self.ref_b, (1, -1))))

        state = self.query_state
        for layer in self.decoder:
            state = decoder_layer_forward(state, self.query_embed, memory_levels,
                                          list(shapes), dec_refs, layer, self.alpha_dec)

        deep = self.levels - 1
        z_tokens = memory_levels[deep]
        dd, dw, dh = shapes[deep]
        z_volume = T.reshape(T.transpose(z_tokens), (self.dim, dd, dw, dh))
        return memory, state, z_volume
