"""Deterministic splitmix64 streams used for payloads and model weights.

The generator is counter-based (output n depends only on seed + n), which
lets numpy produce whole payloads vectorized while a scalar implementation
in another language reproduces the same bytes element by element.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """splitmix64 finalizer: one 64-bit avalanche round."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def splitmix64(seed: int, n: int) -> np.ndarray:
    """First n outputs of a splitmix64 stream as uint64, vectorized."""
    idx = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & MASK64) + idx * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
    return z


def uniform_f32(seed: int, n: int) -> np.ndarray:
    """n float32 values uniform in [-1, 1), one splitmix64 output each.

    Mapping: top 24 bits -> [0,1) in f64, affine to [-1,1), rounded to f32.
    """
    u = splitmix64(seed, n)
    vals = (u >> np.uint64(40)).astype(np.float64) * (2.0 ** -24)
    return (vals * 2.0 - 1.0).astype(np.float32)


def payload_seed(run_seed: int, rank: int, step: int) -> int:
    """Stream seed for the (rank, step) payload of a run. Frozen definition."""
    return mix64(mix64(run_seed) ^ mix64(((rank & 0xFFFFFFFF) << 32) | (step & 0xFFFFFFFF)))
