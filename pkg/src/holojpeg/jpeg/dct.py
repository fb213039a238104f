"""8x8 type-II DCT with JPEG normalization, applied as a separable matrix product."""

import math

import numpy as np


def _basis():
    c = np.empty((8, 8))
    for u in range(8):
        cu = math.sqrt(0.5) if u == 0 else 1.0
        for x in range(8):
            c[u, x] = 0.5 * cu * math.cos((2 * x + 1) * u * math.pi / 16)
    return c


DCT_MATRIX = _basis()


def fdct8x8(block):
    """Forward DCT of one or more level-shifted 8x8 blocks (trailing two axes)."""
    b = np.asarray(block, dtype=np.float64)
    return DCT_MATRIX @ b @ DCT_MATRIX.T


def idct8x8(coeffs):
    c = np.asarray(coeffs, dtype=np.float64)
    return DCT_MATRIX.T @ c @ DCT_MATRIX
