"""Reconstruction-quality metric used by producers/consumers and the trainer demo."""

from __future__ import annotations

import math

import numpy as np


def relative_frobenius(samples) -> float:
    """Mean over sample pairs of ||F - F_approx||_F / ||F||_F, f64 accumulation.

    Each element of `samples` is a pair of shape-matching arrays. A zero-norm
    reference array is an error: the ratio is undefined there.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("relative_frobenius needs at least one sample pair")
    total = 0.0
    for i, (ref, approx) in enumerate(samples):
        ref = np.asarray(ref, dtype=np.float64)
        approx = np.asarray(approx, dtype=np.float64)
        if ref.shape != approx.shape:
            raise ValueError(f"sample {i}: shape {approx.shape} != reference {ref.shape}")
        denom = math.sqrt(float(np.sum(ref * ref)))
        if denom == 0.0:
            raise ValueError(f"sample {i}: reference has zero Frobenius norm")
        diff = ref - approx
        total += math.sqrt(float(np.sum(diff * diff))) / denom
    return total / len(samples)
