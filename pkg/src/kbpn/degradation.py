"""Blur kernels, the blur-and-downsample degradation, and kernel codes.

The degradation maps an HR image to its LR observation::

    lr = downsample(hr * kernel, s)

where ``*`` is a true 2-D convolution with reflect padding (same-size
output) and ``downsample`` is one of ``decimate``, ``area`` or ``bicubic``.
Kernels are handled in float64; the torch path is differentiable and is
reused inside the networks.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

DOWN_MODES = ("decimate", "area", "bicubic")
DEFAULT_KERNEL_SIZE = 21
DEFAULT_CODE_DIM = 9
DEFAULT_SIGMA_RANGE = (0.2, 4.0)


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianSpec:
    sigma_x: float
    sigma_y: float
    theta: float = 0.0

    @classmethod
    def isotropic(cls, sigma: float) -> "GaussianSpec":
        return cls(sigma, sigma, 0.0)


def check_kernel(kernel: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    kernel = np.asarray(kernel)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise KernelError(f"kernel must be square, got shape {kernel.shape}")
    if kernel.shape[0] % 2 == 0:
        raise KernelError(f"kernel size must be odd, got {kernel.shape[0]}")
    if not np.all(np.isfinite(kernel)) or kernel.min() < 0:
        raise KernelError("kernel entries must be finite and nonnegative")
    if abs(kernel.sum() - 1.0) > atol:
        raise KernelError(f"kernel must sum to 1, sums to {kernel.sum():.12g}")
    return kernel


def gaussian_kernel(spec: GaussianSpec, k: int = DEFAULT_KERNEL_SIZE) -> np.ndarray:
    """Sample a rotated 2-D Gaussian on a ``k x k`` grid and normalize it.

    Offsets are integer pixel positions relative to the center; ``x`` runs
    along columns and ``y`` along rows. The covariance is
    ``R(theta) diag(sigma_x^2, sigma_y^2) R(theta)^T``.
    """
    if spec.sigma_x <= 0 or spec.sigma_y <= 0:
        raise KernelError(f"sigmas must be positive: {spec}")
    if k < 1 or k % 2 == 0:
        raise KernelError(f"kernel size must be a positive odd integer, got {k}")
    c, s = math.cos(spec.theta), math.sin(spec.theta)
    rot = np.array([[c, -s], [s, c]])
    cov = rot @ np.diag([spec.sigma_x ** 2, spec.sigma_y ** 2]) @ rot.T
    prec = np.linalg.inv(cov)
    r = k // 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    q = prec[0, 0] * x * x + (prec[0, 1] + prec[1, 0]) * x * y + prec[1, 1] * y * y
    dens = np.exp(-0.5 * q)
    return dens / dens.sum()


def delta_kernel(k: int = DEFAULT_KERNEL_SIZE) -> np.ndarray:
    out = np.zeros((k, k))
    out[k // 2, k // 2] = 1.0
    return out


def sample_gaussian_spec(rng: np.random.Generator, family: str = "isotropic",
                         sigma_range=DEFAULT_SIGMA_RANGE) -> GaussianSpec:
    """Draw a training blur. Isotropic: one sigma; anisotropic: two sigmas and an angle."""
    lo, hi = sigma_range
    if family == "isotropic":
        sigma = float(rng.uniform(lo, hi))
        return GaussianSpec(sigma, sigma, 0.0)
    if family == "anisotropic":
        sx, sy = (float(v) for v in rng.uniform(lo, hi, size=2))
        return GaussianSpec(sx, sy, float(rng.uniform(0.0, math.pi)))
    raise ValueError(f"unknown blur family {family!r}")


# ---------------------------------------------------------------- degradation

def blur(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Convolve every channel of ``x`` (N, C, H, W) with a kernel.

    ``kernel`` is either a single ``(k, k)`` kernel or one ``(N, k, k)``
    kernel per batch item. Reflect padding keeps the spatial size.
    """
    n, c, h, w = x.shape
    kernel = kernel.to(dtype=x.dtype, device=x.device)
    if kernel.dim() == 2:
        kernel = kernel.expand(n, -1, -1)
    k = kernel.shape[-1]
    r = k // 2
    if r >= h or r >= w:
        raise KernelError(f"kernel of size {k} too large for a {h}x{w} image under reflect padding")
    padded = F.pad(x.reshape(1, n * c, h, w), (r, r, r, r), mode="reflect")
    # conv2d is a correlation, so the kernel is flipped to get a convolution
    weight = kernel.flip(-1, -2).repeat_interleave(c, dim=0).unsqueeze(1)
    out = F.conv2d(padded, weight, groups=n * c)
    return out.reshape(n, c, h, w)


def downsample(x: torch.Tensor, s: int, mode: str = "area") -> torch.Tensor:
    if mode not in DOWN_MODES:
        raise ValueError(f"down_mode must be one of {DOWN_MODES}, got {mode!r}")
    if s == 1:
        return x
    if mode == "decimate":
        return x[..., ::s, ::s]
    if mode == "area":
        return F.avg_pool2d(x, s)
    return F.interpolate(x, scale_factor=1.0 / s, mode="bicubic", align_corners=False,
                         antialias=True)


def degrade_tensor(x: torch.Tensor, kernel: torch.Tensor, s: int, mode: str = "area") -> torch.Tensor:
    """Batched, differentiable blur-and-downsample.

    ``decimate`` and ``area`` are evaluated as a single stride-``s``
    convolution (for ``area`` the kernel is first convolved with the
    ``s x s`` box), which only computes the retained output pixels.
    """
    if mode not in DOWN_MODES:
        raise ValueError(f"down_mode must be one of {DOWN_MODES}, got {mode!r}")
    n, c, h, w = x.shape
    if h % s or w % s:
        raise KernelError(f"image size {h}x{w} not divisible by scale {s}")
    if mode == "bicubic" or s == 1:
        return downsample(blur(x, kernel), s, mode)
    kernel = kernel.to(dtype=x.dtype, device=x.device)
    if kernel.dim() == 2:
        kernel = kernel.expand(n, -1, -1)
    k = kernel.shape[-1]
    r = k // 2
    if r >= h or r >= w:
        raise KernelError(f"kernel of size {k} too large for a {h}x{w} image under reflect padding")
    weight = kernel.flip(-1, -2).unsqueeze(1)  # (N, 1, k, k)
    if mode == "area":
        box = torch.full((1, 1, s, s), 1.0 / (s * s), dtype=x.dtype, device=x.device)
        weight = F.conv2d(F.pad(weight, (s - 1,) * 4), box)  # (N, 1, k+s-1, k+s-1)
    padded = F.pad(x.reshape(1, n * c, h, w), (r, r, r, r), mode="reflect")
    out = F.conv2d(padded, weight.repeat_interleave(c, dim=0), stride=s, groups=n * c)
    return out.reshape(n, c, h // s, w // s)


def degrade(hr: np.ndarray, kernel: np.ndarray, s: int, down_mode: str = "area") -> np.ndarray:
    """Blur an ``(C, H, W)`` image with ``kernel`` and downsample by ``s`` (float64)."""
    check_kernel(kernel)
    if hr.ndim != 3:
        raise KernelError(f"expected (C, H, W), got {hr.shape}")
    x = torch.from_numpy(np.ascontiguousarray(hr, dtype=np.float64))[None]
    out = degrade_tensor(x, torch.from_numpy(np.asarray(kernel, dtype=np.float64)), s, down_mode)
    return out[0].numpy()


# ---------------------------------------------------------------- kernel codes

@dataclass
class KernelPCA:
    """Low-rank kernel basis: rows of ``basis`` are orthonormal directions."""

    basis: np.ndarray  # (a, k*k)
    mean: np.ndarray  # (k*k,)
    explained_variance_ratio: np.ndarray  # (a,)
    seed: int | None = None

    @property
    def a(self) -> int:
        return self.basis.shape[0]

    @property
    def k(self) -> int:
        return int(round(math.sqrt(self.mean.size)))

    def encode(self, kernel: np.ndarray) -> np.ndarray:
        return encode_kernel(kernel, self)

    def decode(self, code: np.ndarray) -> np.ndarray:
        return decode_kernel(code, self)


def fit_kernel_pca(samples, a: int = DEFAULT_CODE_DIM, seed: int | None = None) -> KernelPCA:
    """Principal directions of flattened kernels.

    Each basis row is signed so that its largest-magnitude entry is positive.
    """
    flat = np.stack([np.asarray(s, dtype=np.float64).ravel() for s in samples])
    n, d = flat.shape
    if n < a:
        raise KernelError(f"need at least {a} samples, got {n}")
    if a > d:
        raise KernelError(f"code dimension {a} exceeds kernel dimension {d}")
    mean = flat.mean(axis=0)
    centered = flat - mean
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    var = np.zeros(d)
    var[: sv.size] = sv ** 2
    basis = vt[:a].copy()
    idx = np.argmax(np.abs(basis), axis=1)
    signs = np.sign(basis[np.arange(a), idx])
    signs[signs == 0] = 1.0
    basis *= signs[:, None]
    total = var.sum()
    ratio = var[:a] / total if total > 0 else np.zeros(a)
    return KernelPCA(basis=basis, mean=mean, explained_variance_ratio=ratio, seed=seed)


def encode_kernel(kernel: np.ndarray, pca: KernelPCA) -> np.ndarray:
    flat = np.asarray(kernel, dtype=np.float64).ravel()
    if flat.size != pca.mean.size:
        raise KernelError(f"kernel has {flat.size} entries, basis expects {pca.mean.size}")
    return pca.basis @ (flat - pca.mean)


def decode_kernel(code: np.ndarray, pca: KernelPCA) -> np.ndarray:
    code = np.asarray(code, dtype=np.float64)
    if code.shape != (pca.a,):
        raise KernelError(f"code has shape {code.shape}, basis expects ({pca.a},)")
    flat = np.clip(pca.mean + pca.basis.T @ code, 0.0, None)
    total = flat.sum()
    if total <= 0:
        raise KernelError("decoded kernel has no positive mass")
    k = pca.k
    return (flat / total).reshape(k, k)


def sample_training_kernels(n: int, k: int = DEFAULT_KERNEL_SIZE, family: str = "isotropic",
                            sigma_range=DEFAULT_SIGMA_RANGE, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [gaussian_kernel(sample_gaussian_spec(rng, family, sigma_range), k) for _ in range(n)]


def default_pca(k: int = DEFAULT_KERNEL_SIZE, a: int = DEFAULT_CODE_DIM, family: str = "isotropic",
                sigma_range=DEFAULT_SIGMA_RANGE, n: int = 10_000, seed: int = 0) -> KernelPCA:
    """Basis fitted on ``n`` kernels drawn from the training blur distribution."""
    samples = sample_training_kernels(n, k, family, sigma_range, seed)
    return fit_kernel_pca(samples, a, seed=seed)


def reference_mean_kernel(k: int = DEFAULT_KERNEL_SIZE, family: str = "isotropic",
                          sigma_range=DEFAULT_SIGMA_RANGE, n: int = 2000, seed: int = 0) -> np.ndarray:
    """Average kernel of a blur family; the baseline for kernel-error reporting."""
    mean = np.mean(sample_training_kernels(n, k, family, sigma_range, seed), axis=0)
    return mean / mean.sum()


def stretch(vec, h: int, w: int):
    """Broadcast a vector into constant spatial planes.

    A numpy ``(d,)`` vector gives a ``(d, h, w)`` array; a torch ``(N, d)``
    batch gives an ``(N, d, h, w)`` tensor.
    """
    if isinstance(vec, torch.Tensor):
        if vec.dim() != 2:
            raise ValueError(f"expected (N, d) tensor, got {tuple(vec.shape)}")
        return vec[:, :, None, None].expand(-1, -1, h, w)
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1 or vec.size < 1:
        raise ValueError(f"expected non-empty 1-D vector, got shape {vec.shape}")
    return np.broadcast_to(vec[:, None, None], (vec.size, h, w)).copy()


# ---------------------------------------------------------------- file formats

def _write_flat(path: Path, values: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.asarray(values, dtype="<f8").ravel().tofile(path)


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def save_kernel(path, kernel: np.ndarray, spec: GaussianSpec | None = None,
                down_mode: str | None = None) -> None:
    """Little-endian float64 flat binary of k*k values plus ``<path>.json`` sidecar."""
    path = Path(path)
    check_kernel(kernel)
    _write_flat(path, kernel)
    meta = {
        "k": int(kernel.shape[0]),
        "sigma_x": None if spec is None else spec.sigma_x,
        "sigma_y": None if spec is None else spec.sigma_y,
        "theta": None if spec is None else spec.theta,
        "down_mode": down_mode,
    }
    _sidecar(path).write_text(json.dumps(meta, indent=2))


def load_kernel(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(_sidecar(path).read_text())
    k = int(meta["k"])
    flat = np.fromfile(path, dtype="<f8")
    if flat.size != k * k:
        raise KernelError(f"{path}: expected {k * k} values, found {flat.size}")
    return check_kernel(flat.reshape(k, k).astype(np.float64)), meta


def save_pca(path, pca: KernelPCA) -> None:
    """Basis rows then mean, float64 little-endian; sidecar carries ``{a, k, seed}``."""
    path = Path(path)
    _write_flat(path, np.concatenate([pca.basis.ravel(), pca.mean, pca.explained_variance_ratio]))
    meta = {"a": pca.a, "k": pca.k, "seed": pca.seed}
    _sidecar(path).write_text(json.dumps(meta, indent=2))


def load_pca(path) -> KernelPCA:
    path = Path(path)
    meta = json.loads(_sidecar(path).read_text())
    a, k = int(meta["a"]), int(meta["k"])
    d = k * k
    flat = np.fromfile(path, dtype="<f8")
    if flat.size != a * d + d + a:
        raise KernelError(f"{path}: size mismatch for a={a}, k={k}")
    basis = flat[: a * d].reshape(a, d)
    mean = flat[a * d: a * d + d]
    ratio = flat[a * d + d:]
    return KernelPCA(basis=basis, mean=mean, explained_variance_ratio=ratio, seed=meta.get("seed"))
