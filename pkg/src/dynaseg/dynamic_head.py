"""Per-task dynamic segmentation head and the MLP that predicts its kernels.

The head is a stack of 1x1x1 convolutions whose weights and biases are not
model parameters: they arrive packed in one flat vector per task, produced
row-wise from the task's output embedding. Layout of the packed vector is
layer-major; within a layer the (out, in) row-major weight matrix precedes
the bias. The first head_depth-1 layers are head_width wide, the last layer
always has 2 output channels (organ, tumor).
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import xavier_uniform
from .errors import ConfigError, DimensionError, FormatError, TaskError
from .tensor import Tensor


def dynamic_param_count(head_width: int, head_depth: int) -> int:
    """Length of one task's packed kernel vector."""
    if head_width < 1:
        raise ConfigError(f"head width must be >= 1, got {head_width}")
    if head_depth < 2:
        raise ConfigError(f"head depth must be >= 2, got {head_depth}")
    return (head_width * head_width + head_width) * (head_depth - 1) + (head_width * 2 + 2)


def kernel_segments(head_width: int, head_depth: int) -> list:
    """Per-layer (out_channels, in_channels, weight_len, bias_len) layout."""
    segs = []
    for _ in range(head_depth - 1):
        segs.append((head_width, head_width, head_width * head_width, head_width))
    segs.append((2, head_width, 2 * head_width, 2))
    return segs


def slice_kernels(omega: Tensor, head_width: int, head_depth: int) -> list:
    """Split a packed (d_F,) vector into per-layer (weights, bias) tensors."""
    d_f = dynamic_param_count(head_width, head_depth)
    if omega.shape != (d_f,):
        raise FormatError(f"kernel vector has length {omega.shape}, expected ({d_f},)")
    layers = []
    pos = 0
    for out_c, in_c, wlen, blen in kernel_segments(head_width, head_depth):
        w = T.reshape(T.narrow(omega, 0, pos, wlen), (out_c, in_c))
        pos += wlen
        b = T.narrow(omega, 0, pos, blen)
        pos += blen
        layers.append((w, b))
    return layers


def pack_kernels(layers, head_width: int, head_depth: int) -> np.ndarray:
    """Inverse of slice_kernels on raw arrays (round-trip identity)."""
    parts = []
    for w, b in layers:
        parts.append(np.asarray(w).reshape(-1))
        parts.append(np.asarray(b).reshape(-1))
    out = np.concatenate(parts)
    if out.size != dynamic_param_count(head_width, head_depth):
        raise FormatError(f"packed length {out.size} does not match layout")
    return out


@dataclass
class FilterHeadParams:
    """Single-hidden-layer MLP applied independently to each task embedding."""
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix="filter_head"):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2


def init_filter_head(dim: int, d_f: int, rng: np.random.Generator,
                     dtype=np.float64) -> FilterHeadParams:
    # small output init keeps the generated kernels (and hence the head
    # logits) near zero at the start, so the sigmoid never saturates early
    return FilterHeadParams(
        w1=Tensor(xavier_uniform(rng, dim, dim, dtype), requires_grad=True),
        b1=Tensor(np.zeros(dim, dtype=dtype), requires_grad=True),
        w2=Tensor(rng.normal(0.0, 0.01, size=(dim, d_f)).astype(dtype),
                  requires_grad=True),
        b2=Tensor(np.zeros(d_f, dtype=dtype), requires_grad=True),
    )


def predict_filters(t_out: Tensor, params: FilterHeadParams) -> Tensor:
    """(M, dim) task embeddings -> (M, d_F) packed kernel vectors, row-wise."""
    if t_out.shape[1] != params.w1.shape[0]:
        raise ConfigError(f"embedding width {t_out.shape[1]} != MLP input width "
                          f"{params.w1.shape[0]}")
    h = T.relu(T.add(T.matmul(t_out, params.w1), T.reshape(params.b1, (1, -1))))
    return T.add(T.matmul(h, params.w2), T.reshape(params.b2, (1, -1)))


def dynamic_forward(features: Tensor, kernels: Tensor, task: int,
                    head_width: int, head_depth: int) -> Tensor:
    """Run one task's head over (C2,D,W,H) features -> (2,D,W,H) logits.

    relu between layers, no activation after the last (the loss applies
    sigmoid). Other tasks' kernel rows are never touched.
    """
    num_tasks = kernels.shape[0]
    if not 0 <= task < num_tasks:
        raise TaskError(f"task id {task} out of range [0, {num_tasks})")
    if features.shape[0] != head_width:
        raise DimensionError(f"feature channels {features.shape[0]} != head width {head_width}")
    omega = T.reshape(T.narrow(kernels, 0, task, 1), (kernels.shape[1],))
    x = features
    layers = slice_kernels(omega, head_width, head_depth)
    for i, (w, b) in enumerate(layers):
        x = T.conv3d_1x1(x, w, b)
        if i < len(layers) - 1:
            x = T.relu(x)
    return x


def dynamic_forward_all(features: Tensor, kernels: Tensor,
                        head_width: int, head_depth: int) -> Tensor:
    """All task heads in one pass -> (M,2,D,W,H); row m equals the single-task run."""
    outs = [dynamic_forward(features, kernels, m, head_width, head_depth)
            for m in range(kernels.shape[0])]
    return T.stack(outs, axis=0)
