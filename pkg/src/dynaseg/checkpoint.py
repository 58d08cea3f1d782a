"""Checkpoint container: full model/optimizer state in one little-endian file.

Layout: magic "DODCKPT1" | u32 version | u32 json_len | json metadata |
float32 buffers. Buffers are the parameters in registry order, then the
first Adam moments, then the second moments, same order. Metadata embeds
the model config, step counter, training seed, and the parameter manifest
(names + shapes) so a file is self-describing.

Buffers are stored as float32 (the training dtype); deterministic resume is
bit-exact for float32 models.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig, SCHEMA_VERSION, config_to_dict, _from_dict
from .errors import CheckpointMismatchError, FormatError
from .model import SegModel
from .optim import AdamW

MAGIC = b"DODCKPT1"
VERSION = 1


def save_checkpoint(path, model: SegModel, optimizer: AdamW | None = None,
                    step: int = 0, train_seed: int = 0) -> None:
    params = model.param_list()
    meta = {
        "schema_version": SCHEMA_VERSION,
        "model": config_to_dict(model.cfg)["model"],
        "model_seed": model.seed,
        "step": int(step),
        "optimizer_t": int(optimizer.t) if optimizer is not None else 0,
        "has_moments": optimizer is not None,
        "prng": {"seed": int(train_seed), "next_step": int(step)},
        "params": [{"name": n, "shape": list(p.shape)} for n, p in params],
    }
    blob = json.dumps(meta).encode()
    buffers = [p.data.astype("<f4").tobytes() for _, p in params]
    if optimizer is not None:
        buffers += [optimizer.moments[n][0].astype("<f4").tobytes() for n, _ in params]
        buffers += [optimizer.moments[n][1].astype("<f4").tobytes() for n, _ in params]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for b in buffers:
            fh.write(b)


def _read_meta(blob: bytes, path) -> tuple:
    if len(blob) < len(MAGIC) or blob[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic", offset=0)
    head_end = len(MAGIC) + 8
    if len(blob) < head_end:
        raise FormatError(f"{path}: truncated header", offset=len(blob))
    version, jlen = struct.unpack("<II", blob[len(MAGIC):head_end])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}",
                          offset=len(MAGIC))
    if len(blob) < head_end + jlen:
        raise FormatError(f"{path}: truncated metadata", offset=len(blob))
    try:
        meta = json.loads(blob[head_end:head_end + jlen])
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: corrupt metadata: {e}", offset=head_end) from e
    return meta, head_end + jlen


def load_checkpoint(path):
    """Returns (meta, model, optimizer). The optimizer carries restored
    moments when the file has them, else fresh zeros."""
    blob = Path(path).read_bytes()
    meta, offset = _read_meta(blob, path)
    cfg = _from_dict(ModelConfig, meta["model"], "model")
    model = SegModel(cfg, seed=meta.get("model_seed", 0))
    params = model.param_list()

    names = [e["name"] for e in meta["params"]]
    if names != [n for n, _ in params]:
        raise FormatError(f"{path}: parameter manifest does not match the model "
                          f"built from the embedded config")

    def take(count_params):
        nonlocal offset
        out = []
        for name, p in count_params:
            n = p.data.size
            end = offset + 4 * n
            if len(blob) < end:
                raise FormatError(f"{path}: truncated buffer for {name}", offset=len(blob))
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
            out.append(arr.reshape(p.shape))
            offset = end
        return out

    for (name, p), arr in zip(params, take(params)):
        p.data = arr.astype(model.dtype)
    optimizer = AdamW(params)
    if meta.get("has_moments"):
        ms = take(params)
        vs = take(params)
        moments = {name: (m.astype(model.dtype), v.astype(model.dtype))
                   for (name, _), m, v in zip(params, ms, vs)}
        optimizer.load_state(meta.get("optimizer_t", meta["step"]), moments)
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes", offset=offset)
    return meta, model, optimizer


def check_compatible(meta: dict, cfg: ModelConfig, path="checkpoint") -> None:
    """Raise listing every field on which the checkpoint and config disagree."""
    stored = meta["model"]
    requested = config_to_dict(cfg)["model"]
    diffs = {k: (stored.get(k), requested.get(k))
             for k in sorted(set(stored) | set(requested))
             if stored.get(k) != requested.get(k)}
    if diffs:
        raise CheckpointMismatchError(diffs)
