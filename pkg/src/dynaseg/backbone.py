"""Shared CNN encoder-decoder producing the task-agnostic feature map.

Encoder: stage 1 keeps full resolution, every later stage opens with a
stride-2 convolution, so an S-stage encoder downsamples by 2^(S-1).
Residual blocks are (conv3x3x3 -> instance norm -> relu) twice plus a skip,
with a 1x1x1 projection on channel change. Convolutions feeding a norm are
bias-free.

Decoder: the bottleneck input depends on the fusion mode -- "A" adds the
projected transformer volume to the deepest encoder features, "B" uses the
encoder features alone, "C" uses the projected transformer volume alone.
The transformer projection has no bias, so mode "A" with a zero transformer
volume computes exactly what mode "B" does. Each upsampling step doubles
resolution trilinearly, projects to the skip level's width, adds the skip,
and refines with one residual block; a final 1x1x1 convolution emits the
output channels.
"""

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)).astype(dtype)


def _conv_param(rng, out_c, in_c, k, dtype):
    fan_in = in_c * k ** 3
    return Tensor(he_normal(rng, (out_c, in_c, k, k, k), fan_in, dtype), requires_grad=True)


def _proj_param(rng, out_c, in_c, dtype):
    return Tensor(he_normal(rng, (out_c, in_c), in_c, dtype), requires_grad=True)


class NormRelu:
    def __init__(self, channels, dtype):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    def __call__(self, x, activate=True):
        y = T.instance_norm(x, self.gamma, self.beta)
        return T.relu(y) if activate else y

    def named(self, prefix):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta


class ResBlock:
    def __init__(self, in_c, out_c, rng, dtype):
        self.conv1 = _conv_param(rng, out_c, in_c, 3, dtype)
        self.norm1 = NormRelu(out_c, dtype)
        self.conv2 = _conv_param(rng, out_c, out_c, 3, dtype)
        self.norm2 = NormRelu(out_c, dtype)
        self.skip = _proj_param(rng, out_c, in_c, dtype) if in_c != out_c else None

    def __call__(self, x):
        h = self.norm1(T.conv3d(x, self.conv1, padding=1))
        h = self.norm2(T.conv3d(h, self.conv2, padding=1))
        s = x if self.skip is None else T.conv3d_1x1(x, self.skip)
        return T.add(h, s)

    def named(self, prefix):
        yield f"{prefix}.conv1", self.conv1
        yield from self.norm1.named(f"{prefix}.norm1")
        yield f"{prefix}.conv2", self.conv2
        yield from self.norm2.named(f"{prefix}.norm2")
        if self.skip is not None:
            yield f"{prefix}.skip", self.skip


class Backbone:
    def __init__(self, stage_channels, blocks_per_stage, out_channels, fusion_mode,
                 transformer_dim, rng, dtype=np.float64, in_channels=1):
        if fusion_mode not in ("A", "B", "C"):
            raise ConfigError(f"fusion mode must be A, B or C, got {fusion_mode!r}")
        if len(stage_channels) < 2:
            raise ConfigError("backbone needs at least two stages")
        self.stage_channels = list(stage_channels)
        self.fusion_mode = fusion_mode
        self.out_channels = out_channels
        self.dtype = np.dtype(dtype)

        # encoder
        self.stages = []
        prev = in_channels
        for s, ch in enumerate(stage_channels):
            down = None
            if s > 0:
                down = (_conv_param(rng, ch, prev, 3, dtype), NormRelu(ch, dtype))
                prev = ch
            blocks = []
            for _ in range(blocks_per_stage):
                blocks.append(ResBlock(prev, ch, rng, dtype))
                prev = ch
            self.stages.append((down, blocks))

        # decoder
        self.z_proj = (_proj_param(rng, stage_channels[-1], transformer_dim, dtype)
                       if fusion_mode in ("A", "C") else None)
        self.up_projs = []
        self.up_blocks = []
        for s in range(len(stage_channels) - 2, -1, -1):
            self.up_projs.append(_proj_param(rng, stage_channels[s], stage_channels[s + 1], dtype))
            self.up_blocks.append(ResBlock(stage_channels[s], stage_channels[s], rng, dtype))
        self.final_w = _proj_param(rng, out_channels, stage_channels[0], dtype)
        self.final_b = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)

    def named_params(self, prefix="backbone"):
        for s, (down, blocks) in enumerate(self.stages):
            if down is not None:
                yield f"{prefix}.enc{s}.down.conv", down[0]
                yield from down[1].named(f"{prefix}.enc{s}.down.norm")
            for b, block in enumerate(blocks):
                yield from block.named(f"{prefix}.enc{s}.block{b}")
        if self.z_proj is not None:
            yield f"{prefix}.z_proj", self.z_proj
        for i, (proj, block) in enumerate(zip(self.up_projs, self.up_blocks)):
            yield f"{prefix}.dec{i}.proj", proj
            yield from block.named(f"{prefix}.dec{i}.block")
        yield f"{prefix}.final.w", self.final_w
        yield f"{prefix}.final.b", self.final_b

    def encode(self, x: Tensor) -> list:
        """(1,D,W,H) -> per-stage features, finest first."""
        if x.ndim != 4:
            raise DimensionError(f"encoder input must be (C,D,W,H), got {x.shape}")
        factor = 2 ** (len(self.stages) - 1)
        for axis, size in zip("DWH", x.shape[1:]):
            if size % factor:
                raise DimensionError(
                    f"input {axis}={size} not divisible by the encoder stride {factor}")
        pyramid = []
        h = x
        for down, blocks in self.stages:
            if down is not None:
                h = down[1](T.conv3d(h, down[0], stride=2, padding=1))
            for block in blocks:
                h = block(h)
            pyramid.append(h)
        return pyramid

    def decode(self, pyramid: list, z_volume: Tensor | None,
               fusion_mode: str | None = None) -> Tensor:
        """Fuse at the bottleneck, upsample with skips, emit (C2,D,W,H)."""
        mode = self.fusion_mode if fusion_mode is None else fusion_mode
        deep = pyramid[-1]
        if mode == "B":
            x = deep
        else:
            if self.z_proj is None:
                raise ConfigError("backbone was built without a transformer projection")
            if z_volume is None:
                raise ConfigError(f"fusion mode {mode} needs a transformer volume")
            if z_volume.shape[1:] != deep.shape[1:]:
                raise DimensionError(
                    f"fusion shapes differ: transformer {z_volume.shape[1:]} "
                    f"vs bottleneck {deep.shape[1:]}")
            z = T.conv3d_1x1(z_volume, self.z_proj)
            x = T.add(deep, z) if mode == "A" else z
        for i, (proj, block) in enumerate(zip(self.up_projs, self.up_blocks)):
            skip = pyramid[len(pyramid) - 2 - i]
            x = T.upsample_trilinear_2x(x)
            x = T.conv3d_1x1(x, proj)
            x = block(T.add(x, skip))
        return T.conv3d_1x1(x, self.final_w, self.final_b)

    def param_count(self) -> int:
        return sum(t.size for _, t in self.named_params())
