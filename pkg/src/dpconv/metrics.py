"""Image quality metrics for inpainting results; images are expected in [0, 1]."""
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .convspec import ShapeError


@dataclass
class MetricReport:
    l1_percent: float
    psnr_db: float  # math.inf for identical images
    ssim: float


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def l1_percent(a, b):
    a, b = _pair(a, b)
    return float(100.0 * np.mean(np.abs(a - b)))


def psnr(a, b, peak=1.0):
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    k = g.size
    img = sliding_window_view(img, k, axis=-1) @ g
    return np.swapaxes(sliding_window_view(np.swapaxes(img, -1, -2), k, axis=-1) @ g, -1, -2)


def ssim(a, b, peak=1.0, window=11, sigma=1.5):
    """Mean structural similarity over channels and window positions.

    Gaussian-weighted local statistics (11x11, sigma 1.5), evaluated only
    where the window fits inside the image.
    """
    a, b = _pair(a, b)
    if a.ndim < 2 or min(a.shape[-2:]) < window:
        raise ShapeError(f"images must be at least {window}x{window}, got {a.shape}")
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    g = gaussian_window(window, sigma)
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def evaluate(a, b):
    return MetricReport(l1_percent(a, b), psnr(a, b), ssim(a, b))
