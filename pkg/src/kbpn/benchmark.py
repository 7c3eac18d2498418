"""Fixed-blur benchmark runs over a folder of HR images."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .degradation import GaussianSpec, degrade, gaussian_kernel
from .training import crop_to_scale, estimated_kernel, load_pool
from .metrics import psnr, ssim

BENCH_COLUMNS = ["condition", "sigma_x", "sigma_y", "theta", "images", "psnr", "ssim", "kernel_l1"]
ISOTROPIC_SIGMAS = (0.2, 1.3, 2.6, 4.0)
ANISOTROPIC_PAIRS = ((1.3, 2.6), (2.6, 4.0))


@dataclass
class BenchSpec:
    blurs: list
    dataset_dir: str | None = None
    scale: int = 4
    down_mode: str = "area"
    crop_border: int | None = None  # None: the scale factor
    luma_only: bool = True
    kernel_size: int = 21
    images: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.blurs:
            raise ValueError("blur list is empty")

    @property
    def crop(self) -> int:
        return self.scale if self.crop_border is None else self.crop_border


def condition_label(spec: GaussianSpec) -> str:
    if spec.sigma_x == spec.sigma_y:
        return f"sigma={spec.sigma_x:g}"
    return f"sigma={spec.sigma_x:g}/{spec.sigma_y:g},theta={spec.theta:.3g}"


def isotropic_blurs(sigmas=ISOTROPIC_SIGMAS) -> list[GaussianSpec]:
    return [GaussianSpec.isotropic(s) for s in sigmas]


def anisotropic_blurs(pairs=ANISOTROPIC_PAIRS, theta: float = math.pi / 4) -> list[GaussianSpec]:
    return [GaussianSpec(sx, sy, theta) for sx, sy in pairs]


@torch.no_grad()
def run_benchmark(model, spec: BenchSpec, out_dir=None) -> list[dict]:
    """Score ``model`` on every blur condition; writes ``benchmark.csv``/``.txt`` if ``out_dir``."""
    images = spec.images or (load_pool(spec.dataset_dir) if spec.dataset_dir else [])
    if not images:
        raise ValueError("benchmark dataset is empty")
    if hasattr(model, "eval"):
        model.eval()
    rows = []
    for blur in spec.blurs:
        kernel = gaussian_kernel(blur, spec.kernel_size)
        p, s, kl = [], [], []
        for img in images:
            hr = crop_to_scale(img, spec.scale)
            lr = degrade(hr, kernel, spec.scale, spec.down_mode)
            result = model(torch.from_numpy(lr[None]).float())
            sr = result.sr[0].double().clamp(0, 1).numpy()
            p.append(psnr(sr, hr, spec.crop, spec.luma_only))
            s.append(ssim(sr, hr, spec.crop, spec.luma_only))
            est = estimated_kernel(model, result)
            if est is not None:
                kl.append(float(np.mean(np.abs(est[0] - kernel))))
        rows.append({
            "condition": condition_label(blur), "sigma_x": blur.sigma_x, "sigma_y": blur.sigma_y,
            "theta": blur.theta, "images": len(images), "psnr": float(np.mean(p)),
            "ssim": float(np.mean(s)), "kernel_l1": float(np.mean(kl)) if kl else math.nan,
        })
    if out_dir is not None:
        write_benchmark(rows, out_dir)
    return rows


def format_table(rows: list[dict]) -> str:
    header = f"{'condition':<28}{'PSNR':>8}{'SSIM':>8}{'K L1':>11}"
    lines = [header, "-" * len(header)]
    for r in rows:
        kl = "-" if math.isnan(r["kernel_l1"]) else f"{r['kernel_l1']:.3e}"
        lines.append(f"{r['condition']:<28}{r['psnr']:>8.2f}{r['ssim']:>8.3f}{kl:>11}")
    return "\n".join(lines) + "\n"


def write_benchmark(rows: list[dict], out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "benchmark.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    txt_path = out_dir / "benchmark.txt"
    txt_path.write_text(format_table(rows))
    return csv_path, txt_path
