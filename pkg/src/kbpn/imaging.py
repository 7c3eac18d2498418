"""Image I/O, luma conversion and patch sampling.

Images are plain ``float64`` numpy arrays laid out channel-major as
``(C, H, W)`` with values in ``[0, 1]`` and ``C`` in ``{1, 3}``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

# ITU-R BT.601 luma weights (full swing); studio swing scales them by 219/255
# and adds a 16/255 offset.
BT601 = np.array([0.299, 0.587, 0.114])
BT601_STUDIO = np.array([65.481, 128.553, 24.966]) / 255.0
STUDIO_OFFSET = 16.0 / 255.0


class ImageError(ValueError):
    pass


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate the ``(C, H, W)`` layout and value range; returns ``img``."""
    if img.ndim != 3:
        raise ImageError(f"{name}: expected (C, H, W), got shape {img.shape}")
    c, h, w = img.shape
    if c not in (1, 3):
        raise ImageError(f"{name}: channel count must be 1 or 3, got {c}")
    if h < 1 or w < 1:
        raise ImageError(f"{name}: empty raster {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ImageError(f"{name}: non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ImageError(f"{name}: values outside [0, 1]")
    return img


def load_image(path) -> np.ndarray:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
    except OSError as exc:
        raise ImageError(f"cannot read {path}: {exc}") from exc
    if head != PNG_MAGIC:
        raise ImageError(f"{path}: not a PNG file (lossy formats are rejected)")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageError(f"{path}: unreadable PNG")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageError(f"{path}: unsupported bit depth ({raw.dtype})")
    if raw.ndim == 2:
        arr = raw[None]
    elif raw.shape[2] == 3:
        arr = raw[:, :, ::-1].transpose(2, 0, 1)  # BGR -> RGB
    else:
        raise ImageError(f"{path}: unsupported channel count {raw.shape[2]}")
    return np.ascontiguousarray(arr, dtype=np.float64) / scale


def quantize(img: np.ndarray, bit_depth: int = 8) -> np.ndarray:
    """Round to the nearest code of the given bit depth, staying in [0, 1]."""
    top = (1 << bit_depth) - 1
    return np.round(np.clip(img, 0.0, 1.0) * top) / top


def save_image(img: np.ndarray, path, bit_depth: int = 8) -> None:
    """Write a PNG. Values are clipped to [0, 1] and rounded to the bit depth."""
    if bit_depth not in (8, 16):
        raise ImageError(f"unsupported bit depth {bit_depth}")
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ImageError(f"expected (C, H, W) with C in {{1, 3}}, got {img.shape}")
    top = (1 << bit_depth) - 1
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    codes = np.round(np.clip(img, 0.0, 1.0) * top).astype(dtype)
    if codes.shape[0] == 1:
        out = codes[0]
    else:
        out = np.ascontiguousarray(codes[::-1].transpose(1, 2, 0))  # RGB -> BGR
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), out):
        raise ImageError(f"failed to write {path}")


def rgb_to_y(img: np.ndarray, swing: str = "full") -> np.ndarray:
    """BT.601 luma of an RGB image, returned as a 1-channel image.

    ``swing="full"`` is the offset-free variant used for metrics;
    ``swing="studio"`` maps white to 235/255 and black to 16/255.
    """
    if img.ndim != 3 or img.shape[0] != 3:
        raise ImageError(f"rgb_to_y needs a 3-channel image, got shape {img.shape}")
    if swing == "full":
        y = np.tensordot(BT601, img, axes=1)
    elif swing == "studio":
        y = STUDIO_OFFSET + np.tensordot(BT601_STUDIO, img, axes=1)
    else:
        raise ValueError(f"unknown swing {swing!r}")
    return y[None]


@dataclass(frozen=True)
class PatchSpec:
    lr_patch_size: int
    scale: int
    hflip: bool = True
    vflip: bool = True

    @property
    def hr_patch_size(self) -> int:
        return self.lr_patch_size * self.scale

    def validate(self, hr: np.ndarray) -> None:
        if self.lr_patch_size < 1 or self.scale < 1:
            raise ImageError(f"invalid patch spec {self}")
        p = self.hr_patch_size
        if p > min(hr.shape[1:]):
            raise ImageError(
                f"HR patch {p}px does not fit image of size {hr.shape[1]}x{hr.shape[2]}"
            )


@dataclass(frozen=True)
class FlipRecord:
    top: int
    left: int
    hflip: bool
    vflip: bool


def random_patch_pair(hr: np.ndarray, spec: PatchSpec, rng_seed) -> tuple[np.ndarray, FlipRecord]:
    """Crop a random HR patch and apply random flips.

    The top-left corner is uniform over all valid positions. Both flip coins
    are always drawn so the random stream does not depend on ``spec.hflip``
    or ``spec.vflip``.
    """
    spec.validate(hr)
    rng = np.random.default_rng(rng_seed)
    p = spec.hr_patch_size
    _, h, w = hr.shape
    top = int(rng.integers(0, h - p + 1))
    left = int(rng.integers(0, w - p + 1))
    hflip = bool(rng.random() < 0.5) and spec.hflip
    vflip = bool(rng.random() < 0.5) and spec.vflip
    patch = hr[:, top:top + p, left:left + p]
    if hflip:
        patch = patch[:, :, ::-1]
    if vflip:
        patch = patch[:, ::-1, :]
    return np.ascontiguousarray(patch), FlipRecord(top, left, hflip, vflip)
