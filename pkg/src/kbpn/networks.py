"""DBPN-Bl, KCBPN and KBPN assembled from the blocks.

Every network runs ``T`` stages of up/down projection on LR features and
reconstructs the SR image from the channelwise concatenation of all SR
feature maps (ascending stage order). The last stage only up-projects:
its down projection and conditioning would have no consumer.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .blocks import (
    SFT,
    BlockConfig,
    BlurUpdater,
    DownProjection,
    FeatureExtractor,
    KernelPredictor,
    Reconstruction,
    ResidualFeedback,
    UpProjection,
    init_weights,
    logits_to_kernel,
    small_init_,
)
from .degradation import DEFAULT_CODE_DIM, DEFAULT_KERNEL_SIZE, KernelPCA, degrade_tensor, stretch

VARIANTS = ("dbpn_bl", "kcbpn", "kbpn")


@dataclass
class NetworkConfig:
    variant: str = "kbpn"
    stages: int = 4
    scale: int = 4
    base_channels: int = 64
    kernel_size: int = DEFAULT_KERNEL_SIZE
    code_dim: int = DEFAULT_CODE_DIM
    in_channels: int = 3
    down_mode: str = "area"
    residual_feedback: bool = True
    slope: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.stages < 1:
            raise ValueError(f"stages must be >= 1, got {self.stages}")
        self.block_config()  # validates scale, channels, kernel size

    def block_config(self) -> BlockConfig:
        return BlockConfig(self.base_channels, self.scale, self.kernel_size, self.slope, self.in_channels)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StageTrace:
    t: int
    sr_features: torch.Tensor  # F^SR_t, (N, c, sH, sW)
    sr: torch.Tensor | None = None  # I^SR_t (kbpn)
    kernel: torch.Tensor | None = None  # K_t (kbpn)
    residual: torch.Tensor | None = None  # R^LR_t (kbpn)


@dataclass
class ForwardResult:
    sr: torch.Tensor
    kernel: torch.Tensor | None  # (N, k, k) for kbpn, (N, a) code for kcbpn
    traces: list[StageTrace] = field(default_factory=list)
    final_residual: torch.Tensor | None = None  # degrade(sr, K_T) - lr (kbpn)


class _IterativeSR(nn.Module):
    variant = ""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        if cfg.variant != self.variant:
            raise ValueError(f"{type(self).__name__} needs variant {self.variant!r}, got {cfg.variant!r}")
        self.cfg = cfg
        c, s, t = cfg.base_channels, cfg.scale, cfg.stages
        self.extractor = FeatureExtractor(cfg.in_channels, c, slope=cfg.slope)
        self.ups = nn.ModuleList(UpProjection(c, s, slope=cfg.slope) for _ in range(t))
        # stage i (1-based) down-projects a bank of i feature maps
        self.downs = nn.ModuleList(
            DownProjection(c, s, in_channels=c * (i + 1), slope=cfg.slope) for i in range(t - 1)
        )
        self.reconstruct = Reconstruction(c * t, cfg.in_channels)

    def _check_input(self, lr):
        if lr.dim() != 4 or lr.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected (N, {self.cfg.in_channels}, h, w) input, got {tuple(lr.shape)}")


class DBPNBl(_IterativeSR):
    """Dense back-projection SR without any kernel branch."""

    variant = "dbpn_bl"

    def __init__(self, cfg: NetworkConfig):
        super().__init__(cfg)
        init_weights(self, cfg.slope)

    def forward(self, lr) -> ForwardResult:
        self._check_input(lr)
        feat = self.extractor(lr)
        bank, traces = [], []
        for t in range(self.cfg.stages):
            bank.append(self.ups[t](feat))
            traces.append(StageTrace(t + 1, bank[-1]))
            if t < self.cfg.stages - 1:
                feat = self.downs[t](torch.cat(bank, dim=1))
        return ForwardResult(self.reconstruct(torch.cat(bank, dim=1)), None, traces)


class KCBPN(_IterativeSR):
    """Back-projection SR conditioned by SFT on a low-dimensional kernel code."""

    variant = "kcbpn"

    def __init__(self, cfg: NetworkConfig, pca: KernelPCA | None = None):
        super().__init__(cfg)
        c, a, d = cfg.base_channels, cfg.code_dim, cfg.kernel_size ** 2
        self.predictor = KernelPredictor(cfg.in_channels, a, c, cfg.slope)
        self.sfts = nn.ModuleList(SFT(c, a, cfg.slope) for _ in range(cfg.stages - 1))
        self.register_buffer("pca_basis", torch.zeros(a, d, dtype=torch.float64))
        self.register_buffer("pca_mean", torch.zeros(d, dtype=torch.float64))
        init_weights(self, cfg.slope)
        if pca is not None:
            self.set_pca(pca)

    def set_pca(self, pca: KernelPCA) -> None:
        if pca.basis.shape != tuple(self.pca_basis.shape):
            raise ValueError(f"basis shape {pca.basis.shape} does not match config {tuple(self.pca_basis.shape)}")
        self.pca_basis.copy_(torch.from_numpy(pca.basis))
        self.pca_mean.copy_(torch.from_numpy(pca.mean))

    @property
    def has_basis(self) -> bool:
        return bool(self.pca_mean.abs().sum() > 0)

    def pca(self) -> KernelPCA:
        return KernelPCA(self.pca_basis.numpy().copy(), self.pca_mean.numpy().copy(),
                         np.zeros(self.cfg.code_dim))

    def forward(self, lr) -> ForwardResult:
        self._check_input(lr)
        if not self.has_basis:
            raise RuntimeError("KCBPN needs a fitted kernel basis (set_pca) before running")
        h, w = lr.shape[-2:]
        code = self.predictor(lr)
        dmap = stretch(code, h, w)
        feat = self.extractor(lr)
        bank, traces = [], []
        for t in range(self.cfg.stages):
            bank.append(self.ups[t](feat))
            traces.append(StageTrace(t + 1, bank[-1]))
            if t < self.cfg.stages - 1:
                feat = self.sfts[t](self.downs[t](torch.cat(bank, dim=1)), dmap)
        return ForwardResult(self.reconstruct(torch.cat(bank, dim=1)), code, traces)


class KBPN(_IterativeSR):
    """Back-projection SR with a raw-kernel blur branch and LR-residual feedback."""

    variant = "kbpn"

    def __init__(self, cfg: NetworkConfig):
        super().__init__(cfg)
        c, s, t, k = cfg.base_channels, cfg.scale, cfg.stages, cfg.kernel_size
        self.predictor = KernelPredictor(cfg.in_channels, k * k, c, cfg.slope)
        self.stage_reconstruct = nn.ModuleList(Reconstruction(c * (i + 1), cfg.in_channels) for i in range(t))
        self.updaters = nn.ModuleList(BlurUpdater(cfg.in_channels, k, c, cfg.slope) for _ in range(t))
        self.feedbacks = nn.ModuleList(
            ResidualFeedback(cfg.in_channels, c, s, slope=cfg.slope) for _ in range(t)
        )
        self.sfts = nn.ModuleList(SFT(c, k * k, cfg.slope) for _ in range(t - 1))
        init_weights(self, cfg.slope)
        for u in self.updaters:
            small_init_(u.head)
        for fb in self.feedbacks:
            small_init_(fb.deconv)

    def forward(self, lr, inject: dict | None = None) -> ForwardResult:
        """Run all stages.

        ``inject`` may carry ``"sr"`` and/or ``"kernel"`` tensors that replace
        every stage's SR estimate and updated kernel (test hook).
        """
        self._check_input(lr)
        cfg = self.cfg
        h, w = lr.shape[-2:]
        inject = inject or {}
        kernel = logits_to_kernel(self.predictor(lr), cfg.kernel_size)
        feat = self.extractor(lr)
        bank, traces = [], []
        for t in range(cfg.stages):
            up = self.ups[t](feat)
            sr_t = self.stage_reconstruct[t](torch.cat(bank + [up], dim=1))
            if "sr" in inject:
                sr_t = inject["sr"]
            kernel = self.updaters[t](sr_t, kernel)
            if "kernel" in inject:
                kernel = inject["kernel"].to(sr_t.dtype)
            residual = degrade_tensor(sr_t, kernel, cfg.scale, cfg.down_mode) - lr
            enhanced = up + self.feedbacks[t](residual) if cfg.residual_feedback else up
            bank.append(enhanced)
            traces.append(StageTrace(t + 1, enhanced, sr_t, kernel, residual))
            if t < cfg.stages - 1:
                dmap = stretch(kernel.reshape(kernel.shape[0], -1), h, w)
                feat = self.sfts[t](self.downs[t](torch.cat(bank, dim=1)), dmap)
        sr = self.reconstruct(torch.cat(bank, dim=1))
        final_residual = degrade_tensor(sr, kernel, cfg.scale, cfg.down_mode) - lr
        return ForwardResult(sr, kernel, traces, final_residual)


def build_model(cfg: NetworkConfig, pca: KernelPCA | None = None) -> _IterativeSR:
    if cfg.variant == "dbpn_bl":
        return DBPNBl(cfg)
    if cfg.variant == "kcbpn":
        return KCBPN(cfg, pca)
    return KBPN(cfg)


def count_trainable(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def count_parameters(cfg: NetworkConfig) -> int:
    """Exact number of trainable scalars of the network described by ``cfg``."""
    with torch.device("meta"):
        model = build_model(cfg)
    return count_trainable(model)
