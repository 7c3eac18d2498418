"""Differentiable building blocks shared by the three networks.

All modules take batched ``(N, C, H, W)`` tensors. ``act`` selects the
rectifier (``"prelu"``, ``"lrelu"``) or ``"identity"``, which together with
``bias=False`` turns a block into a linear map for testing.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

# (kernel, stride, padding) of the projection deconvs per scale factor
PROJECTION_GEOMETRY = {2: (6, 2, 2), 4: (8, 4, 2), 8: (12, 8, 2)}
SMALL_INIT = 1e-3


@dataclass(frozen=True)
class BlockConfig:
    base_channels: int = 64
    scale: int = 4
    kernel_size: int = 21
    slope: float = 0.1
    in_channels: int = 3

    def __post_init__(self):
        if self.scale not in PROJECTION_GEOMETRY:
            raise ValueError(f"scale must be one of {sorted(PROJECTION_GEOMETRY)}, got {self.scale}")
        if self.base_channels < 8:
            raise ValueError(f"base_channels must be >= 8, got {self.base_channels}")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")


def make_act(kind: str, channels: int = 1, slope: float = 0.1) -> nn.Module:
    if kind == "prelu":
        return nn.PReLU(channels, init=slope)
    if kind == "lrelu":
        return nn.LeakyReLU(slope)
    if kind == "identity":
        return nn.Identity()
    raise ValueError(f"unknown activation {kind!r}")


def init_weights(module: nn.Module, slope: float = 0.1) -> None:
    """Fan-in scaled normal for conv/deconv/linear weights, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, a=slope, mode="fan_in", nonlinearity="leaky_relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def small_init_(layer: nn.Module, scale: float = SMALL_INIT) -> None:
    # near-zero rather than zero: upstream layers still see gradients on step one
    with torch.no_grad():
        layer.weight.mul_(scale)
        if layer.bias is not None:
            layer.bias.zero_()


def conv(cin: int, cout: int, k: int = 3, stride: int = 1, bias: bool = True) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, bias=bias)


class FeatureExtractor(nn.Module):
    """Four 3x3 conv layers without pooling (VGG-16 head shape), LR resolution kept."""

    def __init__(self, in_channels: int, channels: int, act: str = "prelu", bias: bool = True,
                 slope: float = 0.1):
        super().__init__()
        widths = [in_channels, channels, channels, 2 * channels, channels]
        layers: list[nn.Module] = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            layers += [conv(cin, cout, bias=bias), make_act(act, cout, slope)]
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


class UpProjection(nn.Module):
    """Back-projection up unit: deconv, conv back, residual, deconv the residual."""

    def __init__(self, channels: int, scale: int, act: str = "prelu", bias: bool = True,
                 slope: float = 0.1):
        super().__init__()
        k, s, p = PROJECTION_GEOMETRY[scale]
        self.up1 = nn.ConvTranspose2d(channels, channels, k, s, p, bias=bias)
        self.down = nn.Conv2d(channels, channels, k, s, p, bias=bias)
        self.up2 = nn.ConvTranspose2d(channels, channels, k, s, p, bias=bias)
        self.act1 = make_act(act, channels, slope)
        self.act2 = make_act(act, channels, slope)
        self.act3 = make_act(act, channels, slope)

    def forward(self, lr):
        h0 = self.act1(self.up1(lr))
        l0 = self.act2(self.down(h0))
        h1 = self.act3(self.up2(l0 - lr))
        return h0 + h1


class DownProjection(nn.Module):
    """Back-projection down unit.

    With ``in_channels > channels`` it is the dense variant: a 1x1 conv first
    squeezes the concatenated SR feature bank to ``channels``.
    """

    def __init__(self, channels: int, scale: int, in_channels: int | None = None,
                 act: str = "prelu", bias: bool = True, slope: float = 0.1):
        super().__init__()
        k, s, p = PROJECTION_GEOMETRY[scale]
        in_channels = in_channels or channels
        self.in_channels = in_channels
        if in_channels != channels:
            self.squeeze = nn.Sequential(conv(in_channels, channels, 1, bias=bias),
                                         make_act(act, channels, slope))
        else:
            self.squeeze = nn.Identity()
        self.down1 = nn.Conv2d(channels, channels, k, s, p, bias=bias)
        self.up = nn.ConvTranspose2d(channels, channels, k, s, p, bias=bias)
        self.down2 = nn.Conv2d(channels, channels, k, s, p, bias=bias)
        self.act1 = make_act(act, channels, slope)
        self.act2 = make_act(act, channels, slope)
        self.act3 = make_act(act, channels, slope)

    def forward(self, sr):
        if sr.shape[1] != self.in_channels:
            raise ValueError(f"down projection expects {self.in_channels} channels, got {sr.shape[1]}")
        x = self.squeeze(sr)
        l0 = self.act1(self.down1(x))
        h0 = self.act2(self.up(l0))
        l1 = self.act3(self.down2(h0 - x))
        return l0 + l1


class SFT(nn.Module):
    """Spatial feature transform conditioned on a degradation map.

    ``gamma = sigmoid(scale_path([F, D]))``, ``beta = shift_path([F, D])``,
    output ``F * gamma + beta``.
    """

    def __init__(self, channels: int, map_channels: int, slope: float = 0.1):
        super().__init__()
        cin = channels + map_channels
        self.scale_path = nn.Sequential(conv(cin, channels), nn.LeakyReLU(slope), conv(channels, channels))
        self.shift_path = nn.Sequential(conv(cin, channels), nn.LeakyReLU(slope), conv(channels, channels))

    def forward(self, feat, dmap):
        if feat.shape[-2:] != dmap.shape[-2:]:
            raise ValueError(f"feature {tuple(feat.shape[-2:])} and map {tuple(dmap.shape[-2:])} sizes differ")
        x = torch.cat([feat, dmap], dim=1)
        gamma = torch.sigmoid(self.scale_path(x))
        beta = self.shift_path(x)
        return feat * gamma + beta


class KernelPredictor(nn.Module):
    """Four stride-2 3x3 convs and a global average pool to an ``out_dim`` vector."""

    min_size = 16

    def __init__(self, in_channels: int, out_dim: int, channels: int = 64, slope: float = 0.1):
        super().__init__()
        self.out_dim = out_dim
        self.body = nn.Sequential(
            conv(in_channels, channels, stride=2), nn.LeakyReLU(slope),
            conv(channels, channels, stride=2), nn.LeakyReLU(slope),
            conv(channels, channels, stride=2), nn.LeakyReLU(slope),
            conv(channels, out_dim, stride=2),
        )

    def forward(self, lr):
        h, w = lr.shape[-2:]
        if h < self.min_size or w < self.min_size:
            raise ValueError(f"kernel predictor needs at least {self.min_size}x{self.min_size} input, got {h}x{w}")
        return self.body(lr).mean(dim=(2, 3))


def logits_to_kernel(logits: torch.Tensor, k: int) -> torch.Tensor:
    """Softmax over ``k*k`` logits, reshaped to ``(N, k, k)`` valid kernels."""
    return torch.softmax(logits, dim=1).reshape(-1, k, k)


def kernel_to_logits(kernel: torch.Tensor) -> torch.Tensor:
    flat = kernel.reshape(kernel.shape[0], -1)
    return torch.log(flat.clamp_min(torch.finfo(flat.dtype).tiny))


class BlurUpdater(nn.Module):
    """Residual kernel update driven by the current SR estimate.

    The SR image goes through two 3x3 convs, a global average pool and a
    linear layer to ``k*k`` values, which are added to the log of the previous
    kernel before a softmax. A zero update returns the previous kernel.
    """

    def __init__(self, in_channels: int, k: int, channels: int = 64, slope: float = 0.1):
        super().__init__()
        self.k = k
        self.encoder = nn.Sequential(conv(in_channels, channels), nn.LeakyReLU(slope),
                                     conv(channels, channels), nn.LeakyReLU(slope))
        self.head = nn.Linear(channels, k * k)

    def forward(self, sr, kernel_prev):
        delta = self.head(self.encoder(sr).mean(dim=(2, 3)))
        return logits_to_kernel(kernel_to_logits(kernel_prev) + delta, self.k)


class ResidualFeedback(nn.Module):
    """Lift an LR residual image to SR feature space: 3x3 conv, 1x1 conv, stride-s deconv."""

    def __init__(self, in_channels: int, channels: int, scale: int, act: str = "prelu",
                 bias: bool = True, slope: float = 0.1):
        super().__init__()
        k, s, p = PROJECTION_GEOMETRY[scale]
        self.body = nn.Sequential(
            conv(in_channels, channels, 3, bias=bias), make_act(act, channels, slope),
            conv(channels, channels, 1, bias=bias), make_act(act, channels, slope),
        )
        self.deconv = nn.ConvTranspose2d(channels, channels, k, s, p, bias=bias)

    def forward(self, residual):
        return self.deconv(self.body(residual))


class Reconstruction(nn.Module):
    """3x3 conv to image channels, no activation and no clamping."""

    def __init__(self, in_channels: int, out_channels: int = 3):
        super().__init__()
        self.in_channels = in_channels
        self.conv = conv(in_channels, out_channels)

    def forward(self, bank):
        if bank.shape[1] != self.in_channels:
            raise ValueError(f"reconstruction expects {self.in_channels} channels, got {bank.shape[1]}")
        return self.conv(bank)
