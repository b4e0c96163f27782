"""PSNR and SSIM on 8-bit luminance planes."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d


def _crop(y: np.ndarray, border: int) -> np.ndarray:
    if border < 0:
        raise ValueError("border_crop must be >= 0")
    if border == 0:
        return y
    if 2 * border >= min(y.shape[-2:]):
        raise ValueError(f"border_crop {border} removes the whole {y.shape} image")
    return y[..., border:-border, border:-border]


def psnr(y_a, y_b, border_crop: int = 0, peak: float = 255.0) -> float:
    """``10 log10(peak^2 / MSE)`` after cropping ``border_crop`` pixels per side.

    Identical inputs return ``math.inf``.
    """
    a, b = np.asarray(y_a, dtype=np.float64), np.asarray(y_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    a, b = _crop(a, border_crop), _crop(b, border_crop)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(y_a, y_b, border_crop: int = 0, *, window: int = 11, sigma: float = 1.5, k1: float = 0.01,
         k2: float = 0.03, data_range: float = 255.0) -> float:
    """Mean structural similarity over all fully-inside Gaussian windows,
    after cropping ``border_crop`` pixels per side."""
    a, b = np.asarray(y_a, dtype=np.float64), np.asarray(y_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"ssim expects two equal 2-D planes, got {a.shape} and {b.shape}")
    a, b = _crop(a, border_crop), _crop(b, border_crop)
    if min(a.shape) < window:
        raise ValueError(f"ssim needs at least {window}x{window} pixels, got {a.shape}")
    g = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2

    def filt(x):
        return convolve2d(x, g, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    # var and covariance share one expression so ssim(a, a) is exactly 1
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
