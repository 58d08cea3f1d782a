"""Raw little-endian volume container and dataset manifests.

Layout: magic "MOTSVOL1" | u32 D,W,H | u32 task_id | u64 seed |
D*W*H float32 intensities | D*W*H uint8 labels. The codec is lossless for
the (float32, uint8) payload; read(write(case)) is bit-identical.

Manifests are JSON arrays of {path, task_id, split}; paths are relative to
the manifest file.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .synth import VolumeCase

MAGIC = b"MOTSVOL1"
_HEADER = struct.Struct("<III I Q")  # D,W,H, task_id, seed
MAX_DIM = 1 << 20  # dimension sanity bound against corrupted headers


def write_volume(case: VolumeCase, path) -> None:
    d, w, h = case.y.shape
    x = np.ascontiguousarray(case.x.reshape(d, w, h), dtype="<f4")
    y = np.ascontiguousarray(case.y, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(d, w, h, case.task_id, case.seed))
        fh.write(x.tobytes())
        fh.write(y.tobytes())


def read_volume(path) -> VolumeCase:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC):
        raise FormatError(f"{path}: truncated before magic", offset=len(blob))
    if blob[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}", offset=0)
    header_end = len(MAGIC) + _HEADER.size
    if len(blob) < header_end:
        raise FormatError(f"{path}: truncated header", offset=len(blob))
    d, w, h, task_id, seed = _HEADER.unpack(blob[len(MAGIC):header_end])
    if not (0 < d <= MAX_DIM and 0 < w <= MAX_DIM and 0 < h <= MAX_DIM):
        raise FormatError(f"{path}: implausible dimensions ({d},{w},{h})",
                          offset=len(MAGIC))
    n = d * w * h
    expected = header_end + n * 4 + n
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload length {len(blob) - header_end} does not match "
            f"dims ({d},{w},{h}); expected file size {expected}",
            offset=min(len(blob), expected))
    x = np.frombuffer(blob, dtype="<f4", count=n, offset=header_end)
    y = np.frombuffer(blob, dtype=np.uint8, count=n, offset=header_end + 4 * n)
    return VolumeCase(x.reshape(1, d, w, h).copy(), y.reshape(d, w, h).copy(),
                      int(task_id), int(seed))


def write_manifest(entries: list, path) -> None:
    with open(path, "w") as fh:
        json.dump(entries, fh, indent=2)
        fh.write("\n")


def read_manifest(path) -> list:
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise FormatError(f"{path}: manifest must be a JSON array")
    for e in entries:
        missing = {"path", "task_id", "split"} - set(e)
        if missing:
            raise FormatError(f"{path}: manifest entry missing keys {sorted(missing)}")
    return entries


def load_manifest_cases(path, split: str | None = None) -> list:
    """Read all volumes listed in a manifest, optionally filtered by split."""
    path = Path(path)
    cases = []
    for e in read_manifest(path):
        if split is not None and e["split"] != split:
            continue
        case = read_volume(path.parent / e["path"])
        if case.task_id != e["task_id"]:
            raise FormatError(f"{e['path']}: manifest task {e['task_id']} "
                              f"!= header task {case.task_id}")
        cases.append(case)
    return cases
