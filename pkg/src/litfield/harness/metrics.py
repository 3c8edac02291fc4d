"""PSNR and SSIM on linear-float environment maps."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import gaussian_filter

from ..session import EnvironmentMap

_SSIM_SIGMA = 1.5
_SSIM_RADIUS = 5  # 11x11 window
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def _pixels(img) -> np.ndarray:
    if isinstance(img, EnvironmentMap):
        return img.pixels
    return np.asarray(img, dtype=np.float64)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB over all channels, MAX = 1.0.

    Identical images return +inf.
    """
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"resolution mismatch: {pa.shape} vs {pb.shape}")
    mse = float(np.mean((pa - pb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _luminance(p: np.ndarray) -> np.ndarray:
    if p.ndim == 2:
        return p
    return 0.299 * p[:, :, 0] + 0.587 * p[:, :, 1] + 0.114 * p[:, :, 2]


def _blur(x: np.ndarray) -> np.ndarray:
    return gaussian_filter(x, _SSIM_SIGMA, truncate=_SSIM_RADIUS / _SSIM_SIGMA,
                           mode="nearest")


def ssim(a, b) -> float:
    """Mean local SSIM on luminance with an 11x11 Gaussian window
    (sigma = 1.5) and the standard constants for a [0, 1] dynamic range."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"resolution mismatch: {pa.shape} vs {pb.shape}")
    x, y = _luminance(pa), _luminance(pb)
    mu_x, mu_y = _blur(x), _blur(y)
    var_x = _blur(x * x) - mu_x * mu_x
    var_y = _blur(y * y) - mu_y * mu_y
    cov = _blur(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + _C1) * (2.0 * cov + _C2)
    den = (mu_x ** 2 + mu_y ** 2 + _C1) * (var_x + var_y + _C2)
    return float(np.mean(num / den))
