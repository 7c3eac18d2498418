"""Slow reference implementations used to cross-check the fast paths.

Everything here is written as explicit loops over pixels so that it shares
no code with the vectorized implementations it verifies.
"""
from __future__ import annotations

import math

import numpy as np


def reflect_index(i: int, n: int) -> int:
    """Index into ``[0, n)`` under reflect (mirror without edge repeat) padding."""
    period = 2 * (n - 1)
    if period == 0:
        return 0
    i = abs(i) % period
    return period - i if i >= n else i


def brute_force_degrade(hr: np.ndarray, kernel: np.ndarray, s: int) -> np.ndarray:
    """Convolution with reflect boundaries followed by ``s``-decimation, O(H W k^2)."""
    c, h, w = hr.shape
    k = kernel.shape[0]
    r = k // 2
    out = np.zeros((c, h // s, w // s))
    for ch in range(c):
        for oy in range(h // s):
            for ox in range(w // s):
                y, x = oy * s, ox * s
                acc = 0.0
                for u in range(-r, r + 1):
                    for v in range(-r, r + 1):
                        acc += kernel[u + r, v + r] * hr[ch, reflect_index(y - u, h), reflect_index(x - v, w)]
                out[ch, oy, ox] = acc
    return out


def analytic_gaussian(sigma_x: float, sigma_y: float, theta: float, k: int) -> np.ndarray:
    """Normalized Gaussian density evaluated pixel by pixel in rotated coordinates."""
    r = k // 2
    ct, st = math.cos(theta), math.sin(theta)
    out = np.zeros((k, k))
    for row in range(k):
        for col in range(k):
            x, y = col - r, row - r
            # coordinates along the principal axes
            a = ct * x + st * y
            b = -st * x + ct * y
            out[row, col] = math.exp(-0.5 * (a * a / sigma_x ** 2 + b * b / sigma_y ** 2))
    return out / out.sum()


def brute_force_mse(a: np.ndarray, b: np.ndarray) -> float:
    total, n = 0.0, 0
    for x, y in zip(np.asarray(a, dtype=np.float64).ravel().tolist(), np.asarray(b, dtype=np.float64).ravel().tolist()):
        total += (x - y) ** 2
        n += 1
    return total / n


def brute_force_psnr(a: np.ndarray, b: np.ndarray) -> float:
    return 10.0 * math.log10(1.0 / brute_force_mse(a, b))


def brute_force_ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
                     k1: float = 0.01, k2: float = 0.03) -> float:
    """Literal sliding-window SSIM over all fully contained windows, averaged over channels."""
    half = window // 2
    coords = np.arange(window) - half
    g1 = np.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = np.outer(g1, g1)
    g /= g.sum()
    c1, c2 = k1 ** 2, k2 ** 2
    vals = []
    for ch in range(a.shape[0]):
        for y in range(a.shape[1] - window + 1):
            for x in range(a.shape[2] - window + 1):
                pa = a[ch, y:y + window, x:x + window]
                pb = b[ch, y:y + window, x:x + window]
                ma, mb = (g * pa).sum(), (g * pb).sum()
                va = (g * (pa - ma) ** 2).sum()
                vb = (g * (pb - mb) ** 2).sum()
                cov = (g * (pa - ma) * (pb - mb)).sum()
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def eigen_explained_variance(samples, a: int) -> np.ndarray:
    """Explained-variance ratios from an eigendecomposition of the sample covariance."""
    flat = np.stack([np.asarray(s, dtype=np.float64).ravel() for s in samples])
    centered = flat - flat.mean(axis=0)
    cov = centered.T @ centered
    evals = np.linalg.eigvalsh(cov)[::-1]
    evals = np.clip(evals, 0.0, None)
    return evals[:a] / evals.sum()
