"""Full segmentation model: backbone + kernel generator + filter head +
dynamic per-task heads, with a flat named-parameter registry.

Parameter creation order is fixed by construction from (config, seed), so
checkpoints can serialize buffers positionally and identical seeds yield
bit-identical models.
"""

import numpy as np

from . import rng as rngmod
from . import tensor as T
from .backbone import Backbone
from .config import ModelConfig
from .dynamic_head import (dynamic_forward, dynamic_forward_all,
                           dynamic_param_count, init_filter_head, predict_filters)
from .errors import DimensionError
from .tensor import Tensor
from .transformer import KernelGenerator


class SegModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        self.dtype = cfg.np_dtype
        init_rng = rngmod.stream(seed, rngmod.INIT_STREAM)
        self.backbone = Backbone(cfg.stage_channels, cfg.blocks_per_stage,
                                 cfg.out_channels, cfg.fusion_mode,
                                 transformer_dim=cfg.embed_dim,
                                 rng=init_rng, dtype=self.dtype)
        level_channels = list(cfg.stage_channels[len(cfg.stage_channels) - cfg.levels:])
        self.generator = KernelGenerator(level_channels, dim=cfg.embed_dim,
                                         heads=cfg.heads, enc_layers=cfg.enc_layers,
                                         dec_layers=cfg.dec_layers, points=cfg.points,
                                         num_tasks=cfg.num_tasks,
                                         ffn_hidden=cfg.ffn_hidden,
                                         rng=init_rng, dtype=self.dtype)
        self.d_f = dynamic_param_count(cfg.head_width, cfg.head_depth)
        self.filter_head = init_filter_head(cfg.embed_dim, self.d_f, init_rng, self.dtype)

    # ------------------------------------------------------------ registry
    def named_params(self):
        yield from self.backbone.named_params()
        yield from self.generator.named_params()
        yield from self.filter_head.named()

    def param_list(self):
        return list(self.named_params())

    def param_counts(self) -> dict:
        backbone = self.backbone.param_count()
        generator = sum(t.size for _, t in self.generator.named_params())
        filter_head = sum(t.size for _, t in self.filter_head.named())
        return {
            "dynamic_params_per_task": self.d_f,
            "backbone": backbone,
            "transformer": generator,
            "filter_head": filter_head,
            "total": backbone + generator + filter_head,
        }

    # ------------------------------------------------------------ forward
    def features_and_kernels(self, x: Tensor):
        """Shared trunk: (1,D,W,H) -> (features (C2,D,W,H), kernels (M,d_F))."""
        if x.ndim != 4 or x.shape[0] != 1:
            raise DimensionError(f"model input must be (1,D,W,H), got {x.shape}")
        pyramid = self.backbone.encode(x)
        _, t_out, z_volume = self.generator.run(pyramid)
        feats = self.backbone.decode(pyramid, z_volume)
        kernels = predict_filters(t_out, self.filter_head)
        return feats, kernels

    def forward_task(self, x: Tensor, task: int) -> Tensor:
        """Logits (2,D,W,H) for one task."""
        feats, kernels = self.features_and_kernels(x)
        return dynamic_forward(feats, kernels, task, self.cfg.head_width,
                               self.cfg.head_depth)

    def forward_all(self, x: Tensor) -> Tensor:
        """Logits (M,2,D,W,H) for every task in one shared-trunk pass."""
        feats, kernels = self.features_and_kernels(x)
        return dynamic_forward_all(feats, kernels, self.cfg.head_width,
                                   self.cfg.head_depth)

    def input_tensor(self, x: np.ndarray) -> Tensor:
        return Tensor(np.asarray(x, dtype=self.dtype))
