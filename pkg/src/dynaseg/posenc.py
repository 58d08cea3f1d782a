"""Fixed 3-D sinusoidal positional encodings for flattened volume tokens.

Each of the three axes gets a block of ``dim/3`` features: interleaved
sin/cos pairs of the axis position at geometrically spaced wavelengths.
Rows are ordered to match row-major volume flattening (first axis slowest,
last axis fastest), so token i of a flattened (D,W,H) grid reads row i.
"""

import numpy as np

from .errors import ConfigError


def axis_encoding(n: int, width: int, dtype=np.float64) -> np.ndarray:
    """(n, width) sin/cos table: even columns sin, odd columns cos."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    k = np.arange(width // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * k / width)
    out = np.empty((n, width), dtype=np.float64)
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out.astype(dtype, copy=False)


def encode_positions(d: int, w: int, h: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Positional table of shape (d*w*h, dim) for a (d,w,h) grid.

    dim must be divisible by 6 so each axis holds whole sin/cos pairs.
    """
    if dim % 6 != 0:
        raise ConfigError(f"positional encoding width must be divisible by 6, got {dim}")
    width = dim // 3
    ed = axis_encoding(d, width, dtype)
    ew = axis_encoding(w, width, dtype)
    eh = axis_encoding(h, width, dtype)
    out = np.empty((d, w, h, dim), dtype=dtype)
    out[:, :, :, :width] = ed[:, None, None, :]
    out[:, :, :, width:2 * width] = ew[None, :, None, :]
    out[:, :, :, 2 * width:] = eh[None, None, :, :]
    return out.reshape(d * w * h, dim)


def grid_reference_points(d: int, w: int, h: int) -> np.ndarray:
    """Normalized (z,y,x) voxel-center coordinates, row-major, in [0,1]^3."""
    z = (np.arange(d, dtype=np.float64) + 0.5) / d
    y = (np.arange(w, dtype=np.float64) + 0.5) / w
    x = (np.arange(h, dtype=np.float64) + 0.5) / h
    out = np.empty((d, w, h, 3), dtype=np.float64)
    out[:, :, :, 0] = z[:, None, None]
    out[:, :, :, 1] = y[None, :, None]
    out[:, :, :, 2] = x[None, None, :]
    return out.reshape(d * w * h, 3)
