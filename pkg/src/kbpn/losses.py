"""Training objectives: SR MSE, kernel-code L1, kernel L1, LR-consistency MSE.

All functions accept batched tensors and average over the batch as well.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .degradation import degrade_tensor


@dataclass(frozen=True)
class LossWeights:
    w_sr: float = 1.0
    w_kernel: float = 5.0
    w_lr: float = 0.1

    def __post_init__(self):
        if min(self.w_sr, self.w_kernel, self.w_lr) < 0:
            raise ValueError(f"loss weights must be nonnegative: {self}")


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def sr_loss(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    _same_shape(sr, hr, "sr_loss")
    return ((sr - hr) ** 2).mean()


def _l1(a, b):
    # sign(0) = 0, so the subgradient at exact ties is zero
    return (a - b).abs().mean()


def kernel_code_loss(code: torch.Tensor, code_gt: torch.Tensor) -> torch.Tensor:
    _same_shape(code, code_gt, "kernel_code_loss")
    return _l1(code, code_gt)


def kernel_loss(kernel: torch.Tensor, kernel_gt: torch.Tensor) -> torch.Tensor:
    _same_shape(kernel, kernel_gt, "kernel_loss")
    return _l1(kernel, kernel_gt)


def lr_loss(sr: torch.Tensor, kernel: torch.Tensor, lr: torch.Tensor, s: int,
            down_mode: str = "area") -> torch.Tensor:
    """MSE between the re-degraded SR image and the observed LR image.

    The ``s^2 / (C H W)`` prefactor over the ``C (H/s) (W/s)`` LR terms is
    exactly the plain LR-grid mean.
    """
    h, w = sr.shape[-2:]
    if lr.shape[:-2] != sr.shape[:-2] or lr.shape[-2:] != (h // s, w // s) or h % s or w % s:
        raise ValueError(f"lr_loss: LR shape {tuple(lr.shape)} inconsistent with SR {tuple(sr.shape)} at scale {s}")
    return ((degrade_tensor(sr, kernel, s, down_mode) - lr) ** 2).mean()


@dataclass
class LossBreakdown:
    raw: dict  # unweighted loss values
    weighted: dict  # weight * raw, these sum to ``total``
    total: float


def total_loss(result, targets: dict, weights: LossWeights, variant: str,
               scale: int = 4, down_mode: str = "area") -> tuple[torch.Tensor, LossBreakdown]:
    """Weighted objective for one variant.

    ``targets`` holds ``hr`` and, depending on the variant, ``code`` (kcbpn)
    or ``kernel`` and ``lr`` (kbpn). Kernel terms use the final-stage
    estimate carried by ``result.kernel``.
    """
    required = {"dbpn_bl": ["hr"], "kcbpn": ["hr", "code"], "kbpn": ["hr", "kernel", "lr"]}
    if variant not in required:
        raise ValueError(f"unknown variant {variant!r}")
    absent = [key for key in required[variant] if targets.get(key) is None]
    if absent:
        raise ValueError(f"targets for {variant} lack {absent}")

    raw = {"L_SR": sr_loss(result.sr, targets["hr"])}
    w = {"L_SR": weights.w_sr}
    if variant == "kcbpn":
        raw["L_KC"] = kernel_code_loss(result.kernel, targets["code"])
        w["L_KC"] = weights.w_kernel
    elif variant == "kbpn":
        raw["L_K"] = kernel_loss(result.kernel, targets["kernel"])
        raw["L_LR"] = lr_loss(result.sr, result.kernel, targets["lr"], scale, down_mode)
        w["L_K"], w["L_LR"] = weights.w_kernel, weights.w_lr
    weighted = {name: w[name] * value for name, value in raw.items()}
    total = sum(weighted.values())
    return total, LossBreakdown(
        raw={name: float(v.detach()) for name, v in raw.items()},
        weighted={name: float(v.detach()) for name, v in weighted.items()},
        total=float(total.detach()),
    )
