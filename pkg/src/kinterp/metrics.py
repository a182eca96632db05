"""PSNR and SSIM on frames in [0, 1]."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

from .frames import Frame

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# ITU-R BT.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


def _pair(a: Frame, b: Frame, luma: bool):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    x, y = a.data, b.data
    if luma:
        x = (x @ _LUMA)[..., None]
        y = (y @ _LUMA)[..., None]
    return x, y


def psnr(a: Frame, b: Frame, luma: bool = False) -> float:
    """Peak signal-to-noise ratio in dB for unit peak; ``inf`` for identical frames."""
    x, y = _pair(a, b, luma)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_taps(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    half = len(taps) // 2
    out = correlate1d(img, taps, axis=0, mode="constant")
    out = correlate1d(out, taps, axis=1, mode="constant")
    return out[half:img.shape[0] - half, half:img.shape[1] - half]


def ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Local SSIM of two single-channel images over fully-covered windows."""
    taps = _gaussian_taps()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mx = _filter_valid(x, taps)
    my = _filter_valid(y, taps)
    sxx = _filter_valid(x * x, taps) - mx * mx
    syy = _filter_valid(y * y, taps) - my * my
    sxy = _filter_valid(x * y, taps) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(a: Frame, b: Frame, luma: bool = False) -> float:
    """Mean SSIM, 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    x, y = _pair(a, b, luma)
    if min(x.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    if np.array_equal(x, y):
        return 1.0
    vals = [float(np.mean(ssim_map(x[..., c], y[..., c]))) for c in range(x.shape[2])]
    return float(np.mean(vals))
