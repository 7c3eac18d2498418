"""Small deterministic image corpora for desk-scale experiments.

Images come from the sample set bundled with scikit-image: each source is
area-downscaled by ``zoom`` and a ``size x size`` crop is taken at a fixed
relative position. Train and held-out crops come from different source
images.
"""
from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .imaging import save_image

# (skimage name, zoom, relative top, relative left)
TRAIN_SOURCES = [
    ("astronaut", 4, 0.10, 0.45),
    ("coffee", 4, 0.20, 0.30),
    ("chelsea", 3, 0.15, 0.35),
    ("rocket", 4, 0.35, 0.20),
]
HELDOUT_SOURCES = [
    ("immunohistochemistry", 4, 0.30, 0.30),
    ("camera", 4, 0.20, 0.40),
    ("coins", 3, 0.40, 0.50),
    ("retina", 8, 0.45, 0.45),
]


def _source(name: str) -> np.ndarray:
    from skimage import data

    img = getattr(data, name)()
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    return img[..., :3]


def desk_image(name: str, zoom: int, top: float, left: float, size: int = 64) -> np.ndarray:
    img = _source(name)
    h, w = img.shape[:2]
    small = cv2.resize(img, (w // zoom, h // zoom), interpolation=cv2.INTER_AREA)
    sh, sw = small.shape[:2]
    if sh < size or sw < size:
        raise ValueError(f"{name} at zoom {zoom} is smaller than {size}px")
    y = int(round(top * (sh - size)))
    x = int(round(left * (sw - size)))
    crop = small[y:y + size, x:x + size].astype(np.float64) / 255.0
    return crop.transpose(2, 0, 1).copy()


def desk_corpus(which: str = "train", size: int = 64) -> list[np.ndarray]:
    sources = {"train": TRAIN_SOURCES, "heldout": HELDOUT_SOURCES}[which]
    return [desk_image(*src, size=size) for src in sources]


def write_corpus(out_dir, which: str = "train", size: int = 64) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for i, img in enumerate(desk_corpus(which, size)):
        path = out_dir / f"{which}_{i:02d}.png"
        save_image(img, path)
        paths.append(path)
    return paths
