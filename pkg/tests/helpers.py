"""Shared test data builders."""

import numpy as np

from turbo_attn.tensor_core import MatrixF32


def random_matrix(rng: np.random.Generator, rows: int, cols: int, sigma: float = 1.0) -> MatrixF32:
    """Gaussian FP32 matrix."""
    return MatrixF32(rng.normal(0.0, sigma, size=(rows, cols)))


def equal_peak_blocks(
    rng: np.random.Generator, rows: int, cols: int, block: int, peak: float = 3.0
) -> MatrixF32:
    """Gaussian rows whose every `block`-row slice has max |x| exactly `peak`.

    All slices then share one stage-one scale, so a fixed universal scale
    reproduces the per-block quantization bit for bit.
    """
    data = np.clip(rng.normal(0.0, 1.0, size=(rows, cols)), -0.9 * peak, 0.9 * peak)
    for start in range(0, rows, block):
        data[start, 0] = peak
    return MatrixF32(data)
