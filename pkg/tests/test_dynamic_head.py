"""Dynamic head: published parameter counts, packing layout, per-voxel oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynaseg import tensor as T
from dynaseg.dynamic_head import (dynamic_forward, dynamic_forward_all,
                                  dynamic_param_count, init_filter_head,
                                  kernel_segments, pack_kernels, predict_filters,
                                  slice_kernels)
from dynaseg.errors import ConfigError, FormatError, TaskError
from dynaseg.tensor import Tensor


def rng(seed=0):
    return np.random.Generator(np.random.Philox(key=[seed, 0]))


# ------------------------------------------------------------- parameter count

def test_param_count_published_depth_values():
    assert dynamic_param_count(8, 2) == 90
    assert dynamic_param_count(8, 3) == 162
    assert dynamic_param_count(8, 4) == 234


def test_param_count_published_width_values():
    assert dynamic_param_count(4, 3) == 50
    assert dynamic_param_count(16, 3) == 578


def test_param_count_rejects_shallow_head():
    with pytest.raises(ConfigError):
        dynamic_param_count(8, 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 32), st.integers(2, 6))
def test_param_count_matches_segment_layout(width, depth):
    segs = kernel_segments(width, depth)
    assert sum(w + b for _, _, w, b in segs) == dynamic_param_count(width, depth)


# ------------------------------------------------------------- packing

def test_slice_segments_under_defaults():
    segs = kernel_segments(8, 3)
    lengths = [w + b for _, _, w, b in segs]
    assert lengths == [72, 72, 18]
    assert sum(lengths) == 162


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 5), st.sampled_from([2, 4, 8]))
def test_pack_slice_roundtrip(seed, depth, width):
    vec = rng(seed).normal(size=dynamic_param_count(width, depth))
    layers = slice_kernels(Tensor(vec), width, depth)
    back = pack_kernels([(w.data, b.data) for w, b in layers], width, depth)
    assert back.tobytes() == vec.astype(back.dtype).tobytes()


def test_slice_rejects_wrong_length():
    with pytest.raises(FormatError):
        slice_kernels(Tensor(np.zeros(161)), 8, 3)


def test_zero_kernels_give_zero_logits_and_half_probability():
    feats = Tensor(rng(1).normal(size=(8, 2, 3, 3)))
    kernels = Tensor(np.zeros((2, 162)))
    out = dynamic_forward(feats, kernels, 0, 8, 3)
    np.testing.assert_array_equal(out.data, 0.0)
    np.testing.assert_allclose(T.sigmoid(out).data, 0.5)


# ------------------------------------------------------------- filter prediction

def test_predict_filters_row_independence():
    g = rng(2)
    head = init_filter_head(12, 50, g)
    t1 = g.normal(size=(4, 12))
    t2 = t1.copy()
    t2[2] = g.normal(size=12)
    o1 = predict_filters(Tensor(t1), head).data
    o2 = predict_filters(Tensor(t2), head).data
    np.testing.assert_array_equal(o1[[0, 1, 3]], o2[[0, 1, 3]])
    assert not np.array_equal(o1[2], o2[2])


def test_predict_filters_default_width():
    g = rng(3)
    head = init_filter_head(12, dynamic_param_count(8, 3), g)
    out = predict_filters(Tensor(g.normal(size=(7, 12))), head)
    assert out.shape == (7, 162)


def test_predict_filters_gradient():
    g = rng(4)
    head = init_filter_head(6, 10, g)
    t = Tensor(g.normal(size=(3, 6)), requires_grad=True)
    w = Tensor(g.normal(size=(3, 10)))

    def f():
        return T.tsum(T.mul(predict_filters(t, head), w))

    assert T.grad_check(f, [t, head.w1, head.b2]) < 1e-4


# ------------------------------------------------------------- head forward

def head_oracle(feats, omega, width, depth):
    """Per-voxel (matmul+bias+relu)^(depth-1) then final matmul+bias."""
    c, d, w, h = feats.shape
    out = np.zeros((2, d, w, h))
    mats = []
    pos = 0
    for out_c, in_c, wlen, blen in kernel_segments(width, depth):
        wm = omega[pos:pos + wlen].reshape(out_c, in_c)
        pos += wlen
        bm = omega[pos:pos + blen]
        pos += blen
        mats.append((wm, bm))
    for zi in range(d):
        for yi in range(w):
            for xi in range(h):
                v = feats[:, zi, yi, xi]
                for i, (wm, bm) in enumerate(mats):
                    v = wm @ v + bm
                    if i < len(mats) - 1:
                        v = np.maximum(v, 0.0)
                out[:, zi, yi, xi] = v
    return out


def test_dynamic_forward_vs_per_voxel_oracle():
    g = rng(5)
    feats = g.normal(size=(8, 2, 3, 4))
    kernels = g.normal(size=(3, 162)) * 0.5
    for m in range(3):
        got = dynamic_forward(Tensor(feats), Tensor(kernels), m, 8, 3).data
        want = head_oracle(feats, kernels[m], 8, 3)
        assert np.abs(got - want).max() < 1e-12


def test_single_layer_slice_is_linear_without_relu():
    # one sliced layer applied with identity activation is linear in its kernels
    g = rng(6)
    feats = Tensor(g.normal(size=(4, 2, 2, 2)))
    vec = g.normal(size=dynamic_param_count(4, 2))
    w1, b1 = slice_kernels(Tensor(vec), 4, 2)[0]
    w2, b2 = slice_kernels(Tensor(2 * vec), 4, 2)[0]
    once = T.conv3d_1x1(feats, w1, b1).data
    twice = T.conv3d_1x1(feats, w2, b2).data
    np.testing.assert_allclose(twice, 2.0 * once, atol=1e-12)


def test_dynamic_forward_task_bounds():
    feats = Tensor(np.zeros((8, 2, 2, 2)))
    kernels = Tensor(np.zeros((2, 162)))
    with pytest.raises(TaskError):
        dynamic_forward(feats, kernels, 2, 8, 3)


def test_dynamic_forward_all_rows_bit_identical():
    g = rng(7)
    feats = Tensor(g.normal(size=(8, 2, 3, 3)))
    kernels = Tensor(g.normal(size=(4, 162)))
    allout = dynamic_forward_all(feats, kernels, 8, 3).data
    assert allout.shape == (4, 2, 2, 3, 3)
    for m in range(4):
        single = dynamic_forward(feats, kernels, m, 8, 3).data
        assert allout[m].tobytes() == single.tobytes()


def test_gradient_flows_to_kernels():
    g = rng(8)
    feats = Tensor(g.normal(size=(8, 2, 2, 2)), requires_grad=True)
    kernels = Tensor(g.normal(size=(2, 162)) * 0.4, requires_grad=True)
    w = Tensor(g.normal(size=(2, 2, 2, 2)))

    def f():
        return T.tsum(T.mul(dynamic_forward(feats, kernels, 1, 8, 3), w))

    assert T.grad_check(f, [feats, kernels], samples=40, rng=rng(9)) < 1e-4
    f().backward()
    assert np.all(kernels.grad[0] == 0.0)  # task 0 row untouched by task 1 head
