"""numpy-backed dense tensors with tape-based reverse-mode autodiff.

Every network operation in this package flows through the ops defined here.
A forward op records its inputs and a backward rule on the output tensor;
``Tensor.backward()`` walks the resulting DAG once in reverse topological
order. Graphs are built per step (define-by-run) and garbage-collected with
the loss, so the tape is single-writer by construction.

Backward rules are verified against central finite differences by
``grad_check`` and the test suite. Forward results of matmul and conv3d are
verified against naive loop oracles.
"""

from __future__ import annotations

import contextlib
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, EvaluationError

_DEFAULT_DTYPE = np.dtype(np.float64)
_GRAD_ENABLED = True
_FINITE_CHECKS = True


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    """Set the dtype used by constructors when none is given (f32 or f64)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dt


def set_finite_checks(enabled: bool) -> None:
    """Toggle the NaN/Inf guard applied to every op output."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


@contextlib.contextmanager
def finite_checks(enabled: bool):
    """Temporarily set the per-op NaN/Inf guard (training loops disable it
    and check the loss scalar instead)."""
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    try:
        yield
    finally:
        _FINITE_CHECKS = prev


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, FD probes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Dense real tensor; row-major, optionally carrying a tape node.

    ``data`` is always a float32 or float64 ndarray. ``grad`` is allocated
    lazily during backward and has the same shape and dtype as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(np.dtype(dtype), copy=False)
        elif arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._bwd = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return (f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, "
                f"requires_grad={self.requires_grad})")

    # -- autodiff ------------------------------------------------------
    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output.

        Visits each tape node exactly once; consumer rules always run
        before their inputs' rules (reverse topological order). Non-leaf
        gradients are dropped as soon as they have been consumed.
        """
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar tensor")
        if not self.requires_grad:
            raise EvaluationError("backward() on a tensor with no tape")

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bwd is None:
                continue
            grads = node._bwd(node.grad)
            adopted: set[int] = set()
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    # adopt the returned buffer when it is safe to own it,
                    # avoiding a zero-fill + add for single-consumer chains
                    buf = g.base if g.base is not None else g
                    if g.flags.writeable and buf.flags.owndata and id(buf) not in adopted:
                        parent.grad = g
                        adopted.add(id(buf))
                    else:
                        parent.grad = g.copy()
                else:
                    parent.grad += g
            # free the tape node and its (non-leaf) gradient
            node._bwd = None
            node._parents = ()
            if node is not self:
                node.grad = None

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def transpose(self, axes=None):
        return transpose(self, axes)


def _make(data: np.ndarray, parents: Sequence[Tensor], bwd: Callable, op: str) -> Tensor:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise EvaluationError(f"non-finite values produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._bwd = bwd if track else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce_scalar(x) -> float | None:
    if isinstance(x, Tensor):
        return None
    return float(x)


# -- arithmetic ---------------------------------------------------------

def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    s = _coerce_scalar(b)
    if s is not None:
        return _make(a.data + s, (a,), lambda g: (g,), "add")
    ash, bsh = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)), "add")


def sub(a, b) -> Tensor:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        s = float(b)
        return _make(a.data - s, (a,), lambda g: (g,), "sub")
    if not isinstance(a, Tensor):
        s = float(a)
        return _make(s - b.data, (b,), lambda g: (-g,), "sub")
    ash, bsh = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)), "sub")


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    s = _coerce_scalar(b)
    if s is not None:
        return _make(a.data * s, (a,), lambda g: (g * s,), "mul")
    ad, bd = a.data, b.data
    ash, bsh = a.shape, b.shape
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ash), _unbroadcast(g * ad, bsh)), "mul")


def div(a, b) -> Tensor:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return mul(a, 1.0 / float(b))
    if not isinstance(a, Tensor):
        s = float(a)
        bd = b.data
        bsh = b.shape
        return _make(s / bd, (b,),
                     lambda g: (_unbroadcast(-g * s / (bd * bd), bsh),), "div")
    ad, bd = a.data, b.data
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return (_unbroadcast(g / bd, ash), _unbroadcast(-g * ad / (bd * bd), bsh))

    return _make(ad / bd, (a, b), bwd, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return (g @ bd.T, ad.T @ g)

    return _make(ad @ bd, (a, b), bwd, "matmul")


# -- shape manipulation --------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise DimensionError("concat of an empty sequence")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, bwd, "concat")


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = [reshape(p, p.shape[:axis] + (1,) + p.shape[axis:]) for p in parts]
    return concat(expanded, axis=axis)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    if start < 0 or start + length > a.shape[axis]:
        raise DimensionError(
            f"narrow [{start}:{start + length}) out of range for axis {axis} of {a.shape}")
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[sl] = g
        return (full,)

    return _make(a.data[sl], (a,), bwd, "narrow")


# -- reductions ----------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.shape[ax]
    return mul(tsum(a, axis, keepdims), 1.0 / n)


# -- pointwise nonlinearities ---------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bwd, "sigmoid")


def texp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def tlog(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    ad = a.data
    return _make(out, (a,), lambda g: (g / ad,), "log")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,), "clamp")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)  # detached shift, softmax is shift-invariant
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), bwd, "softmax")


# -- normalizations --------------------------------------------------------

def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance over ``axis`` (no affine)."""
    x = a.data
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bwd(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make(xhat, (a,), bwd, "layer_norm")


def instance_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over the spatial axes of a (C, ...) tensor."""
    x = a.data
    if x.ndim < 2:
        raise DimensionError("instance_norm expects (C, spatial...) input")
    spatial = tuple(range(1, x.ndim))
    nspatial = 1
    for ax in spatial:
        nspatial *= x.shape[ax]
    if nspatial < 2:
        raise DimensionError("instance_norm needs at least 2 spatial voxels")
    if gamma.shape != (x.shape[0],) or beta.shape != (x.shape[0],):
        raise DimensionError("gamma/beta must have shape (C,)")
    mu = x.mean(axis=spatial, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=spatial, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gshape = (x.shape[0],) + (1,) * (x.ndim - 1)
    gd = gamma.data.reshape(gshape)
    out = xhat * gd + beta.data.reshape(gshape)

    def bwd(g):
        dgamma = (g * xhat).sum(axis=spatial)
        dbeta = g.sum(axis=spatial)
        gx = g * gd
        gm = gx.mean(axis=spatial, keepdims=True)
        gxm = (gx * xhat).mean(axis=spatial, keepdims=True)
        return (inv * (gx - gm - xhat * gxm), dgamma, dbeta)

    return _make(out, (a, gamma, beta), bwd, "instance_norm")


# -- convolutions -----------------------------------------------------------

def _triple(v):
    if isinstance(v, (tuple, list)):
        if len(v) != 3:
            raise DimensionError(f"expected 3 entries, got {v!r}")
        return tuple(int(x) for x in v)
    return (int(v),) * 3


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride=1, padding=0) -> Tensor:
    """Dense 3-D cross-correlation of (C_in,D,W,H) with (C_out,C_in,kd,kw,kh).

    Implemented as one GEMM per kernel offset, which keeps memory flat and
    makes the backward rules exact transposes of the forward slices.
    """
    if x.ndim != 4 or w.ndim != 5:
        raise DimensionError(f"conv3d expects 4-D input and 5-D kernel, got {x.shape}, {w.shape}")
    cin, d0, w0, h0 = x.shape
    cout, cin_w, kd, kw, kh = w.shape
    if cin_w != cin:
        raise DimensionError(f"conv3d channel mismatch: input {cin} vs kernel {cin_w}")
    sd, sw, sh = _triple(stride)
    pd, pw, ph = _triple(padding)
    od = (d0 + 2 * pd - kd) // sd + 1
    ow = (w0 + 2 * pw - kw) // sw + 1
    oh = (h0 + 2 * ph - kh) // sh + 1
    if od < 1 or ow < 1 or oh < 1:
        raise DimensionError(
            f"conv3d output size non-positive: input {x.shape[1:]}, kernel {(kd, kw, kh)}, "
            f"stride {(sd, sw, sh)}, padding {(pd, pw, ph)}")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"conv3d bias must have shape ({cout},), got {b.shape}")

    xp = np.pad(x.data, ((0, 0), (pd, pd), (pw, pw), (ph, ph))) if (pd or pw or ph) else x.data
    wd = w.data
    nout = od * ow * oh

    def im2col():
        win = np.lib.stride_tricks.sliding_window_view(xp, (kd, kw, kh), axis=(1, 2, 3))
        win = win[:, ::sd, ::sw, ::sh][:, :od, :ow, :oh]  # (cin, od, ow, oh, kd, kw, kh)
        return np.ascontiguousarray(win.transpose(0, 4, 5, 6, 1, 2, 3)).reshape(
            cin * kd * kw * kh, nout)

    wf = wd.reshape(cout, cin * kd * kw * kh)
    out = (wf @ im2col()).reshape(cout, od, ow, oh)
    if b is not None:
        out = out + b.data.reshape(-1, 1, 1, 1)

    x_req = x.requires_grad
    w_req = w.requires_grad

    def bwd(g):
        dx = dw = db = None
        g2 = g.reshape(cout, nout)
        if w_req:
            dw = (g2 @ im2col().T).reshape(wd.shape)
        if x_req:
            dcols = (wf.T @ g2).reshape(cin, kd, kw, kh, od, ow, oh)
            dxp = np.zeros_like(xp)
            for a in range(kd):
                for bb in range(kw):
                    for c in range(kh):
                        dxp[:, a:a + od * sd:sd, bb:bb + ow * sw:sw, c:c + oh * sh:sh] += \
                            dcols[:, a, bb, c]
            dx = dxp[:, pd:pd + d0, pw:pw + w0, ph:ph + h0] if (pd or pw or ph) else dxp
        if b is not None:
            db = g.sum(axis=(1, 2, 3))
        return (dx, dw, db) if b is not None else (dx, dw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, bwd, "conv3d")


def conv3d_1x1(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-voxel affine map: (C_in,D,W,H) x (C_out,C_in) -> (C_out,D,W,H)."""
    if x.ndim != 4 or w.ndim != 2:
        raise DimensionError(f"conv3d_1x1 expects 4-D input and 2-D weights, got {x.shape}, {w.shape}")
    cin = x.shape[0]
    if w.shape[1] != cin:
        raise DimensionError(f"conv3d_1x1 channel mismatch: input {cin} vs weights {w.shape}")
    spatial = x.shape[1:]
    flat = reshape(x, (cin, -1))
    y = matmul(w, flat)
    if b is not None:
        y = add(y, reshape(b, (-1, 1)))
    return reshape(y, (w.shape[0],) + spatial)


# -- fractional sampling -----------------------------------------------------

def trilinear_sample(volume: Tensor, coords: Tensor) -> Tensor:
    """Sample (C,D,W,H) at fractional (z,y,x) voxel coordinates, zero-padded.

    Integer coordinates hit voxel centers exactly. Out-of-range corners
    contribute zero, so the interpolant fades to zero at the border.
    Differentiable w.r.t. both the volume values and the coordinates.
    """
    if volume.ndim != 4:
        raise DimensionError(f"trilinear_sample expects (C,D,W,H) volume, got {volume.shape}")
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise DimensionError(f"coords must be (P,3), got {coords.shape}")
    c, d, w, h = volume.shape
    volf = volume.data.reshape(c, -1)
    pts = coords.data
    z0 = np.floor(pts[:, 0])
    y0 = np.floor(pts[:, 1])
    x0 = np.floor(pts[:, 2])
    fz = pts[:, 0] - z0
    fy = pts[:, 1] - y0
    fx = pts[:, 2] - x0
    z0 = z0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)

    # per-corner flat indices, validity, and axis weight factors (saved for bwd)
    corners = []
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                iz, iy, ix = z0 + dz, y0 + dy, x0 + dx
                valid = ((iz >= 0) & (iz < d) & (iy >= 0) & (iy < w)
                         & (ix >= 0) & (ix < h))
                idx = np.where(valid, (iz * w + iy) * h + ix, 0)
                wz = fz if dz else 1.0 - fz
                wy = fy if dy else 1.0 - fy
                wx = fx if dx else 1.0 - fx
                corners.append((dz, dy, dx, idx, valid, wz, wy, wx))

    out = np.zeros((c, pts.shape[0]), dtype=volume.data.dtype)
    for _, _, _, idx, valid, wz, wy, wx in corners:
        out += (volf[:, idx] * valid) * (wz * wy * wx)

    vol_req = volume.requires_grad
    coo_req = coords.requires_grad

    def bwd(g):
        dvol = dcoo = None
        if vol_req:
            idx_all = np.concatenate([cr[3] for cr in corners])
            wgt_all = np.concatenate([cr[4] * (cr[5] * cr[6] * cr[7]) for cr in corners])
            contrib = g[:, None, :].repeat(8, axis=1).reshape(c, -1) * wgt_all
            dvolf = np.empty_like(volf)
            for ch in range(c):
                dvolf[ch] = np.bincount(idx_all, weights=contrib[ch],
                                        minlength=volf.shape[1])
            dvol = dvolf.reshape(volume.shape)
        if coo_req:
            dfz = np.zeros(pts.shape[0], dtype=g.dtype)
            dfy = np.zeros_like(dfz)
            dfx = np.zeros_like(dfz)
            for dz, dy, dx, idx, valid, wz, wy, wx in corners:
                s = (g * (volf[:, idx] * valid)).sum(axis=0)
                dfz += (wy * wx) * s * (1.0 if dz else -1.0)
                dfy += (wz * wx) * s * (1.0 if dy else -1.0)
                dfx += (wz * wy) * s * (1.0 if dx else -1.0)
            dcoo = np.stack([dfz, dfy, dfx], axis=1)
        return (dvol, dcoo)

    return _make(out, (volume, coords), bwd, "trilinear_sample")


# -- resampling ---------------------------------------------------------------

@lru_cache(maxsize=None)
def _linear_resize_matrix(n_in: int, n_out: int, dtype_name: str) -> np.ndarray:
    """Interpolation matrix for 1-D linear resize, half-pixel centers, edge clamp."""
    m = np.zeros((n_out, n_in), dtype=np.dtype(dtype_name))
    for i in range(n_out):
        x = (i + 0.5) * n_in / n_out - 0.5
        if x <= 0:
            m[i, 0] = 1.0
        elif x >= n_in - 1:
            m[i, n_in - 1] = 1.0
        else:
            i0 = int(np.floor(x))
            f = x - i0
            m[i, i0] += 1.0 - f
            m[i, i0 + 1] += f
    return m


def axis_resize(x: Tensor, matrix: np.ndarray, axis: int) -> Tensor:
    """Apply a fixed (out,in) interpolation matrix along one axis."""
    xd = np.moveaxis(x.data, axis, 0)
    out = np.moveaxis(np.tensordot(matrix, xd, axes=(1, 0)), 0, axis)
    mt = matrix.T.copy()

    def bwd(g):
        gd = np.moveaxis(g, axis, 0)
        return (np.moveaxis(np.tensordot(mt, gd, axes=(1, 0)), 0, axis),)

    return _make(np.ascontiguousarray(out), (x,), bwd, "axis_resize")


def upsample_trilinear_2x(x: Tensor) -> Tensor:
    """Double every spatial axis of a (C,D,W,H) tensor by linear interpolation."""
    if x.ndim != 4:
        raise DimensionError(f"upsample expects (C,D,W,H), got {x.shape}")
    out = x
    for axis in (1, 2, 3):
        n = out.shape[axis]
        m = _linear_resize_matrix(n, 2 * n, out.dtype.name)
        out = axis_resize(out, m, axis)
    return out


# -- verification --------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-4,
               samples: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds and returns the scalar output from ``params`` (leaf
    tensors with requires_grad). When ``samples`` is given, at most that
    many coordinates per parameter are probed (deterministically from
    ``rng``). Relative error uses max(|analytic|, |numeric|, 1e-8) as the
    denominator.
    """
    for p in params:
        p.grad = None
    out = f()
    if out.size != 1:
        raise EvaluationError("grad_check expects a scalar function")
    if not np.isfinite(out.data).all():
        raise EvaluationError("grad_check: function value is not finite")
    out.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    with no_grad():
        for p, an in zip(params, analytic):
            n = p.data.size
            if samples is not None and n > samples:
                if rng is None:
                    rng = np.random.Generator(np.random.Philox(key=[0, 0]))
                idxs = rng.choice(n, size=samples, replace=False)
            else:
                idxs = range(n)
            flat = p.data.reshape(-1)
            aflat = an.reshape(-1)
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + h
                f1 = float(f().data.reshape(()))
                flat[i] = orig - h
                f2 = float(f().data.reshape(()))
                flat[i] = orig
                if not (np.isfinite(f1) and np.isfinite(f2)):
                    raise EvaluationError("grad_check: perturbed function value is not finite")
                numeric = (f1 - f2) / (2.0 * h)
                a = float(aflat[i])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, rel)
    return worst
