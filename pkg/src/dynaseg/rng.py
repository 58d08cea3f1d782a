"""Deterministic random streams.

Everything random in this package flows through Philox, a counter-based
generator whose output is fixed by (key, counter) alone, so datasets and
training runs reproduce bit-for-bit across platforms. Streams are keyed by
a user seed plus a small purpose id; no global RNG state exists anywhere.
"""

import numpy as np

# purpose ids for derived streams
INIT_STREAM = 0
DATA_STREAM = 1
TRAIN_STREAM = 2

_MIX_A = 0x9E3779B97F4A7C15
_MIX_B = 0xBF58476D1CE4E5B9
_MASK = (1 << 64) - 1


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Return an independent Philox stream for (seed, purpose, index)."""
    key = [seed & _MASK, ((purpose << 32) ^ index) & _MASK]
    return np.random.Generator(np.random.Philox(key=key))


def mix_seed(seed: int, *parts: int) -> int:
    """Fold integers into a 64-bit derived seed (splitmix-style)."""
    h = seed & _MASK
    for p in parts:
        h = (h ^ ((p & _MASK) * _MIX_A & _MASK)) & _MASK
        h = (h * _MIX_B) & _MASK
        h ^= h >> 31
    return h
