"""Seedable synthetic 3-D cases: one ellipsoidal organ with optional
spherical tumors inside it, distinct intensity bands, Gaussian noise.

Generation is a pure function of (task, seed, shape) through a Philox
stream, so datasets reproduce bit-for-bit anywhere. Label values respect
the task's annotation flags: tumor-only tasks keep the organ's intensity
structure but never emit label 1; organ-only tasks contain no tumors.
"""

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .errors import ConfigError
from .tasks import TaskDescriptor

# intensity model (normalized units)
BACKGROUND_MEAN = -0.6
ORGAN_MEAN = 0.3
TUMOR_MEAN = -0.2
NOISE_SIGMA = 0.05

HU_LIMIT = 325.0


@dataclass
class VolumeCase:
    """One sample: intensities in [-1,1], labels in {0,1,2}."""
    x: np.ndarray  # (1,D,W,H) float32
    y: np.ndarray  # (D,W,H) uint8
    task_id: int
    seed: int

    @property
    def shape(self):
        return self.y.shape


def ellipsoid_mask(shape, center, semiaxes) -> np.ndarray:
    """Axis-aligned ellipsoid rasterized on the voxel grid."""
    grids = np.ogrid[tuple(slice(0, s) for s in shape)]
    acc = np.zeros(shape)
    for g, c, a in zip(grids, center, semiaxes):
        acc = acc + ((g - c) / a) ** 2
    return acc <= 1.0


def sphere_mask(shape, center, radius) -> np.ndarray:
    return ellipsoid_mask(shape, center, (radius,) * 3)


def generate_case(task: TaskDescriptor, seed: int, shape) -> VolumeCase:
    """Deterministic case for (task, seed, shape)."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) < 16:
        raise ConfigError(f"volume shape must be 3 axes of at least 16, got {shape}")
    g = rngmod.stream(seed, rngmod.DATA_STREAM)
    dims = np.array(shape, dtype=np.float64)

    center = g.uniform(0.35, 0.65, size=3) * dims
    semiaxes = g.uniform(0.18, 0.30, size=3) * dims
    organ = ellipsoid_mask(shape, center, semiaxes)

    tumor = np.zeros(shape, dtype=bool)
    if task.tumor_labeled:
        for _ in range(int(g.integers(1, 3))):
            # offset within the inner half of the organ so spheres stay inside
            toff = g.uniform(-0.5, 0.5, size=3) * semiaxes
            tradius = g.uniform(0.25, 0.45) * semiaxes.min()
            tumor |= sphere_mask(shape, center + toff, max(tradius, 1.5))
        tumor &= organ  # tumors never leave the organ

    x = np.full(shape, BACKGROUND_MEAN)
    x[organ] = ORGAN_MEAN
    x[tumor] = TUMOR_MEAN
    x += g.normal(0.0, NOISE_SIGMA, size=shape)
    np.clip(x, -1.0, 1.0, out=x)

    y = np.zeros(shape, dtype=np.uint8)
    if task.organ_labeled:
        y[organ] = 1
    y[tumor] = 2
    return VolumeCase(x[None].astype(np.float32), y, task.id, seed)


def preprocess_ct(raw: np.ndarray) -> np.ndarray:
    """Clamp raw HU values to [-325, 325] and rescale linearly to [-1, 1]."""
    return np.clip(np.asarray(raw, dtype=np.float64), -HU_LIMIT, HU_LIMIT) / HU_LIMIT
