"""Overlap and boundary-distance metrics on binary masks."""

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionError, UndefinedMetricError


def dice_metric(pred: np.ndarray, target: np.ndarray) -> float:
    """2|A∩B| / (|A|+|B|); two empty masks count as a perfect match."""
    pred = np.asarray(pred, dtype=bool)
    target = np.asarray(target, dtype=bool)
    if pred.shape != target.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {target.shape}")
    total = int(pred.sum()) + int(target.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((pred & target).sum()) / total


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """(N,3) coordinates of mask voxels with a 6-neighbor outside the mask.

    Voxels touching the array border count as boundary (outside is empty).
    """
    mask = np.asarray(mask, dtype=bool)
    interior = np.ones_like(mask)
    for axis in range(mask.ndim):
        lo = [slice(None)] * mask.ndim
        hi = [slice(None)] * mask.ndim
        lo[axis] = slice(1, None)
        hi[axis] = slice(None, -1)
        shifted_down = np.zeros_like(mask)
        shifted_up = np.zeros_like(mask)
        shifted_down[tuple(hi)] = mask[tuple(lo)]
        shifted_up[tuple(lo)] = mask[tuple(hi)]
        interior &= shifted_down & shifted_up
    return np.argwhere(mask & ~interior)


def hausdorff(pred: np.ndarray, target: np.ndarray) -> float:
    """Symmetric max of directed boundary-to-boundary distances (Euclidean,
    voxel units, 6-connectivity boundaries)."""
    pred = np.asarray(pred, dtype=bool)
    target = np.asarray(target, dtype=bool)
    if pred.shape != target.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {target.shape}")
    if not pred.any() or not target.any():
        raise UndefinedMetricError("Hausdorff distance undefined for an empty mask")
    a = boundary_voxels(pred).astype(np.float64)
    b = boundary_voxels(target).astype(np.float64)
    d_ab = cKDTree(b).query(a)[0].max()
    d_ba = cKDTree(a).query(b)[0].max()
    return float(max(d_ab, d_ba))
