"""Attention primitives against naive loop oracles, plus finite-difference checks."""

import numpy as np
import pytest

from dynaseg import tensor as T
from dynaseg.attention import (MSDAParams, deformable_attention, init_msda,
                               init_self_attention, level_scale, msda, self_attention)
from dynaseg.errors import ConfigError
from dynaseg.tensor import Tensor


def rng(seed=0):
    return np.random.Generator(np.random.Philox(key=[seed, 0]))


# ------------------------------------------------------------------ oracles

def trilinear_point_oracle(vol, z, y, x):
    """Independent 8-corner weighted sum with zero padding."""
    c, d, w, h = vol.shape
    z0, y0, x0 = int(np.floor(z)), int(np.floor(y)), int(np.floor(x))
    fz, fy, fx = z - z0, y - y0, x - x0
    out = np.zeros(c)
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                iz, iy, ix = z0 + dz, y0 + dy, x0 + dx
                if 0 <= iz < d and 0 <= iy < w and 0 <= ix < h:
                    v = vol[:, iz, iy, ix]
                else:
                    v = np.zeros(c)
                wgt = ((fz if dz else 1 - fz) * (fy if dy else 1 - fy)
                       * (fx if dx else 1 - fx))
                out += wgt * v
    return out


def softmax_np(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def self_attention_oracle(q, k, v, p):
    """Per-head loops over queries and keys."""
    heads = p.heads
    dim = q.shape[1]
    dk = dim // heads
    qp = q @ p.wq.data + p.bq.data
    kp = k @ p.wk.data + p.bk.data
    vp = v @ p.wv.data + p.bv.data
    nq, nk = q.shape[0], k.shape[0]
    cat = np.zeros((nq, dim))
    for i in range(heads):
        qi = qp[:, i * dk:(i + 1) * dk]
        ki = kp[:, i * dk:(i + 1) * dk]
        vi = vp[:, i * dk:(i + 1) * dk]
        for a in range(nq):
            logits = np.array([qi[a] @ ki[b] / np.sqrt(dk) for b in range(nk)])
            attn = softmax_np(logits)
            cat[a, i * dk:(i + 1) * dk] = sum(attn[b] * vi[b] for b in range(nk))
    return cat @ p.wo.data + p.bo.data


def msda_oracle(q, refs, tokens_list, shapes, p: MSDAParams):
    """All-loops multi-scale deformable attention (explicit rescale + trilinear)."""
    n, dim = q.shape
    heads, levels, points = p.heads, p.levels, p.points
    dv = dim // heads
    off = (q @ p.offset_w.data + p.offset_b.data).reshape(n, heads, levels, points, 3)
    logits = (q @ p.logit_w.data + p.logit_b.data).reshape(n, heads, levels * points)
    weights = softmax_np(logits).reshape(n, heads, levels, points)
    vols = []
    for l in range(levels):
        proj = tokens_list[l] @ p.value_w[l].data + p.value_b[l].data  # (n_l, dim)
        d, w, h = shapes[l]
        vols.append(proj.T.reshape(heads, dv, d, w, h))
    cat = np.zeros((n, dim))
    for qi in range(n):
        for i in range(heads):
            acc = np.zeros(dv)
            for l in range(levels):
                scale = level_scale(shapes[l])
                base = refs[qi] * scale - 0.5
                for k in range(points):
                    loc = base + off[qi, i, l, k]
                    val = trilinear_point_oracle(vols[l][i], *loc)
                    acc += weights[qi, i, l, k] * val
            cat[qi, i * dv:(i + 1) * dv] = acc
    return cat @ p.out_w.data + p.out_b.data


def randomize_msda(p: MSDAParams, g, offset_scale=1.5, logit_scale=0.5):
    """Give the zero-initialized offset/logit heads random content."""
    p.offset_w.data[...] = g.normal(size=p.offset_w.shape) * offset_scale
    p.offset_b.data[...] = g.normal(size=p.offset_b.shape) * offset_scale
    p.logit_w.data[...] = g.normal(size=p.logit_w.shape) * logit_scale
    p.logit_b.data[...] = g.normal(size=p.logit_b.shape) * logit_scale


# ------------------------------------------------------------------ trilinear

def test_trilinear_integer_lattice_exact():
    g = rng(1)
    vol = g.normal(size=(3, 4, 5, 6))
    pts = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0], [3.0, 4.0, 5.0]])
    out = T.trilinear_sample(Tensor(vol), Tensor(pts)).data
    for j, (z, y, x) in enumerate(pts.astype(int)):
        np.testing.assert_array_equal(out[:, j], vol[:, z, y, x])


def test_trilinear_midpoint_is_mean():
    g = rng(2)
    vol = g.normal(size=(2, 3, 3, 3))
    out = T.trilinear_sample(Tensor(vol), Tensor(np.array([[1.0, 1.0, 1.5]]))).data
    np.testing.assert_allclose(out[:, 0], 0.5 * (vol[:, 1, 1, 1] + vol[:, 1, 1, 2]),
                               atol=1e-15)


def test_trilinear_vs_8corner_oracle():
    g = rng(3)
    vol = g.normal(size=(3, 4, 4, 4))
    pts = g.uniform(-1.0, 4.5, size=(40, 3))  # includes out-of-range points
    out = T.trilinear_sample(Tensor(vol), Tensor(pts)).data
    for j in range(pts.shape[0]):
        want = trilinear_point_oracle(vol, *pts[j])
        assert np.abs(out[:, j] - want).max() < 1e-12


def test_trilinear_gradients_wrt_values_and_coords():
    g = rng(4)
    vol = Tensor(g.normal(size=(2, 3, 4, 4)), requires_grad=True)
    pts = Tensor(g.uniform(0.3, 2.4, size=(6, 3)), requires_grad=True)
    w = Tensor(g.normal(size=(2, 6)))

    def f():
        return T.tsum(T.mul(T.trilinear_sample(vol, pts), w))

    assert T.grad_check(f, [vol, pts]) < 1e-4


# ------------------------------------------------------------------ self-attention

def test_self_attention_single_key_reduces_to_projection():
    g = rng(5)
    p = init_self_attention(8, 2, g)
    q = g.normal(size=(1, 8))
    v = g.normal(size=(1, 8))
    out = self_attention(Tensor(q), Tensor(q), Tensor(v), p).data
    want = (v @ p.wv.data + p.bv.data) @ p.wo.data + p.bo.data
    np.testing.assert_allclose(out, want, atol=1e-12)


def test_self_attention_identical_keys_average_values():
    g = rng(6)
    p = init_self_attention(6, 2, g)
    k = np.tile(g.normal(size=(1, 6)), (5, 1))
    q = g.normal(size=(3, 6))
    v = g.normal(size=(5, 6))
    out = self_attention(Tensor(q), Tensor(k), Tensor(v), p).data
    vbar = np.tile(((v @ p.wv.data + p.bv.data).mean(axis=0, keepdims=True)), (3, 1))
    want = vbar @ p.wo.data + p.bo.data
    np.testing.assert_allclose(out, want, atol=1e-10)


def test_self_attention_vs_loop_oracle():
    g = rng(7)
    p = init_self_attention(12, 2, g)
    q = g.normal(size=(5, 12))
    out = self_attention(Tensor(q), Tensor(q), Tensor(q), p).data
    want = self_attention_oracle(q, q, q, p)
    assert np.abs(out - want).max() < 1e-10


def test_self_attention_gradient():
    g = rng(8)
    p = init_self_attention(6, 2, g)
    q = Tensor(g.normal(size=(4, 6)), requires_grad=True)
    w = Tensor(g.normal(size=(4, 6)))
    params = [q, p.wq, p.wo, p.bv]

    def f():
        return T.tsum(T.mul(self_attention(q, q, q, p), w))

    assert T.grad_check(f, params, samples=20, rng=rng(9)) < 1e-4


def test_self_attention_head_divisibility_error():
    with pytest.raises(ConfigError):
        init_self_attention(7, 2, rng(10))


# ------------------------------------------------------------------ msda

def micro_setup(seed, n_q=6, dim=12, heads=2, levels=2, points=3,
                shapes=((3, 4, 4), (2, 2, 2))):
    g = rng(seed)
    shapes = list(shapes[:levels])
    p = init_msda(dim, heads, levels, points, g)
    randomize_msda(p, g)
    tokens = [g.normal(size=(int(np.prod(s)), dim)) for s in shapes]
    q = g.normal(size=(n_q, dim))
    refs = g.uniform(0.1, 0.9, size=(n_q, 3))
    return g, p, q, refs, tokens, shapes


def test_msda_one_sample_degenerate_case():
    # L=1, K=1, zero offsets, identity value/output projections, single head:
    # output is the token value at the (integer-coordinate) reference point.
    dim, shape = 6, (2, 3, 1)
    g = rng(11)
    p = init_msda(dim, 1, 1, 1, g)
    p.value_w[0].data[...] = np.eye(dim)
    p.value_b[0].data[...] = 0.0
    p.out_w.data[...] = np.eye(dim)
    p.out_b.data[...] = 0.0
    tokens = g.normal(size=(6, dim))
    refs = np.array([[0.75, 0.5, 0.5]])  # voxel (1,1,0) of a (2,3,1) grid
    out = msda(Tensor(g.normal(size=(1, dim))), Tensor(refs),
               [Tensor(tokens)], [shape], p).data
    target_row = (1 * 3 + 1) * 1 + 0
    np.testing.assert_allclose(out[0], tokens[target_row], atol=1e-12)


def test_msda_weights_sum_to_one():
    g, p, q, refs, tokens, shapes = micro_setup(12)
    logits = (q @ p.logit_w.data + p.logit_b.data).reshape(q.shape[0], p.heads, -1)
    w = softmax_np(logits)
    assert np.abs(w.sum(axis=-1) - 1.0).max() < 1e-12


def test_msda_vs_all_loops_oracle():
    for seed in range(3):
        g, p, q, refs, tokens, shapes = micro_setup(20 + seed)
        got = msda(Tensor(q), Tensor(refs), [Tensor(t) for t in tokens], shapes, p).data
        want = msda_oracle(q, refs, tokens, shapes, p)
        assert np.abs(got - want).max() < 1e-10


def test_msda_matches_single_scale_bitwise():
    g, p, q, refs, tokens, shapes = micro_setup(30, levels=1, shapes=((3, 4, 4),))
    a = msda(Tensor(q), Tensor(refs), [Tensor(tokens[0])], shapes, p).data
    b = deformable_attention(Tensor(q), Tensor(refs), Tensor(tokens[0]), shapes[0], p).data
    assert a.tobytes() == b.tobytes()


def test_msda_sample_permutation_invariance():
    g, p, q, refs, tokens, shapes = micro_setup(31)
    got = msda(Tensor(q), Tensor(refs), [Tensor(t) for t in tokens], shapes, p).data
    # permute the K axis of offsets and logits together
    perm = np.array([2, 0, 1])
    n, heads, levels, points = q.shape[0], p.heads, p.levels, p.points

    def permute_cols(w, b, trailing):
        wr = w.reshape(w.shape[0], heads, levels, points, trailing)[:, :, :, perm]
        br = b.reshape(heads, levels, points, trailing)[:, :, perm]
        return wr.reshape(w.shape), br.reshape(b.shape)

    p.offset_w.data, p.offset_b.data = permute_cols(p.offset_w.data, p.offset_b.data, 3)
    p.logit_w.data, p.logit_b.data = permute_cols(p.logit_w.data, p.logit_b.data, 1)
    permuted = msda(Tensor(q), Tensor(refs), [Tensor(t) for t in tokens], shapes, p).data
    assert np.abs(got - permuted).max() < 1e-12


def test_msda_gradients_all_inputs():
    g, p, q, refs, tokens, shapes = micro_setup(32, n_q=4, points=2)
    qt = Tensor(q, requires_grad=True)
    toks = [Tensor(t, requires_grad=True) for t in tokens]
    w = Tensor(g.normal(size=(4, 12)))
    probes = [qt, toks[0], toks[1], p.offset_w, p.offset_b, p.logit_w, p.logit_b,
              p.value_w[0], p.out_w]

    def f():
        return T.tsum(T.mul(msda(qt, Tensor(refs), toks, shapes, p), w))

    assert T.grad_check(f, probes, samples=15, rng=rng(33)) < 1e-4


def test_msda_empty_level_set_errors():
    with pytest.raises(ConfigError):
        init_msda(12, 2, 0, 2, rng(34))
