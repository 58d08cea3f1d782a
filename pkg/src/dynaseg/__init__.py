"""Multi-task 3D segmentation with transformer-generated dynamic-head kernels."""

from .tensor import (
    Tensor,
    conv3d,
    conv3d_1x1,
    default_dtype,
    grad_check,
    instance_norm,
    layer_norm,
    matmul,
    no_grad,
    relu,
    set_default_dtype,
    sigmoid,
    softmax,
    trilinear_sample,
)

__all__ = [
    "Tensor",
    "conv3d",
    "conv3d_1x1",
    "default_dtype",
    "grad_check",
    "instance_norm",
    "layer_norm",
    "matmul",
    "no_grad",
    "relu",
    "set_default_dtype",
    "sigmoid",
    "softmax",
    "trilinear_sample",
]

__version__ = "0.1.0"
