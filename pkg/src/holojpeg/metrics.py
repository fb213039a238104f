"""PSNR, SSIM and compression ratio."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .field import as_gray8

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PEAK = 255.0


def _pair(a, b):
    a, b = as_gray8(a), as_gray8(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB; identical images report ``PSNR_CAP``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(PEAK**2 / mse))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x, g):
    n = len(g)
    x = sliding_window_view(x, n, axis=1) @ g
    return sliding_window_view(x, n, axis=0) @ g


def ssim_map(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    g = gaussian_window()
    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b) -> float:
    """Mean SSIM over 11x11 Gaussian (sigma 1.5) windows fully inside the image."""
    return float(np.mean(ssim_map(a, b)))


def compression_ratio(raw_bytes: int, stream) -> float:
    n = len(stream)
    if n == 0:
        raise ValueError("compressed stream is empty")
    if raw_bytes <= 0:
        raise ValueError(f"raw size must be positive, got {raw_bytes}")
    return raw_bytes / n


@dataclass(frozen=True)
class QualityReport:
    psnr: float
    ssim: float
    raw_bytes: int
    compressed_bytes: int

    @property
    def compression_ratio(self) -> float:
        return self.raw_bytes / self.compressed_bytes


def quality_report(reference, test, raw_bytes: int, stream) -> QualityReport:
    return QualityReport(psnr(reference, test), ssim(reference, test), int(raw_bytes), len(stream))
