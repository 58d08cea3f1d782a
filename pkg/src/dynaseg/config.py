"""Dataclass configs with strict JSON (de)serialization.

Config files are JSON objects {"schema_version": 1, "model": {...},
"train": {...}}. Unknown keys anywhere are hard errors so hyperparameter
typos cannot pass silently; missing keys fall back to defaults.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

SCHEMA_VERSION = 1


@dataclass
class ModelConfig:
    stage_channels: tuple = (8, 16, 32, 64)
    blocks_per_stage: int = 1
    out_channels: int = 8          # pre-segmentation feature width, == head_width
    fusion_mode: str = "A"
    embed_dim: int = 192
    heads: int = 6
    enc_layers: int = 3
    dec_layers: int = 3
    levels: int = 3
    points: int = 4
    ffn_hidden: int = 0            # 0 -> 4 * embed_dim
    num_tasks: int = 7
    head_width: int = 8
    head_depth: int = 3
    dtype: str = "float32"

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        if self.ffn_hidden == 0:
            self.ffn_hidden = 4 * self.embed_dim
        self.validate()

    def validate(self):
        if self.embed_dim % 6:
            raise ConfigError(f"embed_dim must be divisible by 6, got {self.embed_dim}")
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by "
                              f"heads {self.heads}")
        if self.head_width != self.out_channels:
            raise ConfigError(f"head_width ({self.head_width}) must equal backbone "
                              f"out_channels ({self.out_channels})")
        if self.head_depth < 2:
            raise ConfigError(f"head_depth must be >= 2, got {self.head_depth}")
        if not 1 <= self.levels <= len(self.stage_channels):
            raise ConfigError(f"levels ({self.levels}) must be within the "
                              f"{len(self.stage_channels)} backbone stages")
        if self.fusion_mode not in ("A", "B", "C"):
            raise ConfigError(f"fusion_mode must be A, B or C, got {self.fusion_mode!r}")
        if self.enc_layers < 0 or self.dec_layers < 1:
            raise ConfigError("enc_layers must be >= 0 and dec_layers >= 1")
        if self.points < 1:
            raise ConfigError("points must be >= 1")
        if self.num_tasks < 1:
            raise ConfigError("num_tasks must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class TrainConfig:
    lr_init: float = 2e-4
    total_steps: int = 300
    steps_per_epoch: int = 25
    batch_size: int = 2
    weight_decay: float = 1e-2
    seed: int = 0
    patch: tuple = (16, 48, 48)
    window: tuple = (16, 64, 64)
    val_every_epochs: int = 1

    def __post_init__(self):
        self.patch = tuple(int(v) for v in self.patch)
        self.window = tuple(int(v) for v in self.window)
        self.validate()

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be >= 1")
        if len(self.patch) != 3 or len(self.window) != 3:
            raise ConfigError("patch and window must have 3 axes")
        if self.lr_init <= 0:
            raise ConfigError("lr_init must be positive")


def _from_dict(cls, payload: dict, where: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{where} section must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - names
    if unknown:
        raise ConfigError(f"unknown {where} config keys: {sorted(unknown)}")
    try:
        return cls(**payload)
    except TypeError as e:
        raise ConfigError(f"bad {where} config: {e}") from e


def config_to_dict(model: ModelConfig, train: TrainConfig | None = None) -> dict:
    out = {"schema_version": SCHEMA_VERSION, "model": dataclasses.asdict(model)}
    out["model"]["stage_channels"] = list(model.stage_channels)
    if train is not None:
        out["train"] = dataclasses.asdict(train)
        out["train"]["patch"] = list(train.patch)
        out["train"]["window"] = list(train.window)
    return out


def config_from_dict(payload: dict):
    if not isinstance(payload, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(payload) - {"schema_version", "model", "train"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version!r}; "
                          f"expected {SCHEMA_VERSION}")
    model = _from_dict(ModelConfig, payload.get("model", {}), "model")
    train = _from_dict(TrainConfig, payload.get("train", {}), "train")
    return model, train


def load_config(path):
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON: {e}") from e
    return config_from_dict(payload)


def save_config(path, model: ModelConfig, train: TrainConfig | None = None):
    Path(path).write_text(json.dumps(config_to_dict(model, train), indent=2) + "\n")
