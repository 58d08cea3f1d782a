"""Sliding-window multi-task inference over arbitrarily sized volumes.

Windows sit on a regular stride grid; the last window of each axis is
clamped to the boundary so every voxel is covered at least once.
Overlapping sigmoid probabilities are averaged uniformly. Volumes smaller
than the window are zero-padded on the high side and cropped back.
"""

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tasks import TaskDescriptor


def window_starts(size: int, window: int, stride: int) -> list:
    """Start offsets covering [0, size) with the final window clamped."""
    if window >= size:
        return [0]
    starts = list(range(0, size - window + 1, stride))
    if starts[-1] != size - window:
        starts.append(size - window)
    return starts


def sliding_window_infer(model, x: np.ndarray, window, stride=None) -> np.ndarray:
    """(1,D,W,H) intensities -> (M,2,D,W,H) averaged sigmoid probabilities."""
    window = tuple(int(v) for v in window)
    if stride is None:
        stride = tuple(max(1, w // 2) for w in window)
    stride = tuple(int(v) for v in stride)
    if any(s < 1 for s in stride):
        raise ConfigError(f"stride must be positive, got {stride}")
    if any(s > w for s, w in zip(stride, window)):
        raise ConfigError(f"stride {stride} exceeds window {window}")

    x = np.asarray(x)
    if x.ndim != 4 or x.shape[0] != 1:
        raise ConfigError(f"inference input must be (1,D,W,H), got {x.shape}")
    orig = x.shape[1:]
    pad = [max(0, w - s) for w, s in zip(window, orig)]
    if any(pad):
        x = np.pad(x, ((0, 0),) + tuple((0, p) for p in pad))
    padded = x.shape[1:]
    if any(w > s for w, s in zip(window, padded)):
        raise ConfigError(f"window {window} larger than padded volume {padded}")

    m = model.cfg.num_tasks
    acc = np.zeros((m, 2) + padded, dtype=np.float64)
    cnt = np.zeros(padded, dtype=np.float64)
    with T.no_grad():
        for dz in window_starts(padded[0], window[0], stride[0]):
            for dy in window_starts(padded[1], window[1], stride[1]):
                for dx in window_starts(padded[2], window[2], stride[2]):
                    sl = (slice(dz, dz + window[0]), slice(dy, dy + window[1]),
                          slice(dx, dx + window[2]))
                    tile = model.input_tensor(x[(slice(None),) + sl])
                    logits = model.forward_all(tile)
                    probs = T.sigmoid(logits).data
                    acc[(slice(None), slice(None)) + sl] += probs
                    cnt[sl] += 1.0
    assert cnt.min() >= 1.0
    probs = acc / cnt
    return probs[:, :, :orig[0], :orig[1], :orig[2]]


def direct_infer(model, x: np.ndarray) -> np.ndarray:
    """Single full-volume pass -> (M,2,D,W,H) sigmoid probabilities."""
    with T.no_grad():
        return T.sigmoid(model.forward_all(model.input_tensor(x))).data


def can_forward_directly(model, shape) -> bool:
    factor = 2 ** (len(model.cfg.stage_channels) - 1)
    return all(s % factor == 0 for s in shape)


def infer_probabilities(model, x: np.ndarray, window=None, stride=None) -> np.ndarray:
    """Direct pass when the volume divides the encoder stride, else windowed."""
    if window is None or x.shape[1:] == tuple(window) or can_forward_directly(model, x.shape[1:]):
        if can_forward_directly(model, x.shape[1:]):
            return direct_infer(model, x)
    if window is None:
        raise ConfigError(f"volume {x.shape[1:]} needs a sliding window")
    return sliding_window_infer(model, x, window, stride)


def probabilities_to_labels(task_probs: np.ndarray, task: TaskDescriptor,
                            threshold: float = 0.5) -> np.ndarray:
    """(2,D,W,H) probabilities -> {0,1,2} labels honoring the task's channels."""
    organ = task_probs[0] > threshold if task.organ_labeled else np.zeros(
        task_probs.shape[1:], dtype=bool)
    tumor = task_probs[1] > threshold if task.tumor_labeled else np.zeros(
        task_probs.shape[1:], dtype=bool)
    out = np.zeros(task_probs.shape[1:], dtype=np.uint8)
    out[organ] = 1
    out[tumor] = 2
    return out
