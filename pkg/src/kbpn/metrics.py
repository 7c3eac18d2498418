"""PSNR and SSIM on ``(C, H, W)`` images with values in [0, 1].

Evaluation convention used throughout the package: full-swing BT.601 luma,
``scale`` pixels cropped from every border (see ``EVAL_CONVENTION``).
"""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

from .imaging import rgb_to_y

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def eval_convention(scale: int) -> dict:
    return {"crop": scale, "luma_only": True}


def _prepare(a: np.ndarray, b: np.ndarray, crop: int, luma_only: bool):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if luma_only and a.shape[0] == 3:
        a, b = rgb_to_y(a), rgb_to_y(b)
    if crop:
        a = a[:, crop:-crop, crop:-crop]
        b = b[:, crop:-crop, crop:-crop]
    if a.size == 0:
        raise ValueError(f"crop of {crop}px leaves nothing to compare")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, crop: int = 0, luma_only: bool = False) -> float:
    """Peak signal-to-noise ratio in dB for peak 1.0, capped at ``PSNR_CAP``."""
    a, b = _prepare(a, b, crop, luma_only)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    half = g.size // 2
    out = correlate1d(correlate1d(img, g, axis=-1, mode="constant"), g, axis=-2, mode="constant")
    return out[..., half:img.shape[-2] - half, half:img.shape[-1] - half]


def ssim(a: np.ndarray, b: np.ndarray, crop: int = 0, luma_only: bool = False) -> float:
    """Mean single-scale SSIM over all fully-contained 11x11 Gaussian windows.

    Multi-channel inputs are scored per channel and averaged.
    """
    a, b = _prepare(a, b, crop, luma_only)
    if min(a.shape[1:]) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[1]}x{a.shape[2]} smaller than the {SSIM_WINDOW}px window")
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
