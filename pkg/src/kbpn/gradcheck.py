"""Central finite-difference checks of blocks and losses, plus the CLI selfcheck."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import torch
from torch.func import functional_call

from . import blocks as B
from . import losses as L
from .degradation import degrade, degrade_tensor, gaussian_kernel, GaussianSpec
from .oracles import analytic_gaussian, brute_force_degrade

GRAD_RTOL = 1e-4
FD_STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.name}: {self.value:.3e} (tol {self.tolerance:.0e}) {self.detail}".rstrip()


def relative_gradient_error(fn, tensors: list[torch.Tensor], seed: int = 0, h: float = FD_STEP) -> float:
    """Max-norm relative error between autograd and central differences.

    ``fn(*tensors)`` may return any tensor; it is reduced to a scalar by a
    fixed random projection. All tensors are perturbed element by element.
    """
    gen = torch.Generator().manual_seed(seed)
    tensors = [t.detach().clone().double().requires_grad_(True) for t in tensors]
    out = fn(*tensors)
    proj = torch.randn(out.shape, generator=gen, dtype=torch.float64)

    def scalar(*ts):
        return (fn(*ts) * proj).sum()

    analytic = torch.autograd.grad(scalar(*tensors), tensors, allow_unused=True)
    worst_diff, worst_ref = 0.0, 0.0
    with torch.no_grad():
        for t, g in zip(tensors, analytic):
            g = torch.zeros_like(t) if g is None else g
            flat = t.view(-1)
            numeric = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = scalar(*tensors).item()
                flat[i] = orig - h
                down = scalar(*tensors).item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * h)
            worst_diff = max(worst_diff, (numeric - g.view(-1)).abs().max().item())
            worst_ref = max(worst_ref, numeric.abs().max().item())
    return worst_diff / max(worst_ref, 1e-300)


def module_gradient_error(module: torch.nn.Module, inputs: list[torch.Tensor], seed: int = 0) -> float:
    """Gradient check w.r.t. the inputs and every trainable parameter of ``module``."""
    module = module.double()
    names = [n for n, p in module.named_parameters() if p.requires_grad]
    params = [p.detach() for n, p in module.named_parameters() if p.requires_grad]
    n_in = len(inputs)

    def fn(*ts):
        state = dict(zip(names, ts[n_in:]))
        out = functional_call(module, state, tuple(ts[:n_in]))
        return out

    return relative_gradient_error(fn, list(inputs) + params, seed)


def _toy_inputs(gen, *shapes):
    return [torch.rand(s, generator=gen, dtype=torch.float64) for s in shapes]


def block_cases(seed: int = 0) -> dict:
    """Toy-sized (module, inputs) pairs covering every block type."""
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    c, s, k = 4, 4, 5
    lr_feat, sr_feat, img8, img2 = _toy_inputs(gen, (1, c, 2, 2), (1, c, 8, 8), (1, 3, 8, 8), (1, 3, 2, 2))
    kernel = torch.softmax(torch.randn(1, k * k, generator=gen, dtype=torch.float64), 1).reshape(1, k, k)
    bank = torch.rand(1, 2 * c, 8, 8, generator=gen, dtype=torch.float64)
    dmap = torch.rand(1, 3, 2, 2, generator=gen, dtype=torch.float64)
    cases = {
        "feature_extract": (B.FeatureExtractor(3, c), [img8]),
        "up_projection": (B.UpProjection(c, s), [lr_feat]),
        "down_projection": (B.DownProjection(c, s), [sr_feat]),
        "down_projection_dense": (B.DownProjection(c, s, in_channels=2 * c), [bank]),
        "sft": (B.SFT(c, 3), [lr_feat, dmap]),
        # the predictor's four stride-2 convs need a 16x16 footprint
        "kernel_predict": (B.KernelPredictor(3, 8, channels=4), _toy_inputs(gen, (1, 3, 16, 16))),
        "blur_update": (B.BlurUpdater(3, k, channels=4), [img8, kernel]),
        "residual_feedback": (B.ResidualFeedback(3, c, s), [img2]),
        "reconstruct": (B.Reconstruction(2 * c, 3), [bank]),
    }
    for name, (module, _) in cases.items():
        B.init_weights(module)
        # nonzero biases exercise the bias gradients
        with torch.no_grad():
            for p in module.parameters():
                if p.dim() == 1 and p.numel() > 1:
                    p.uniform_(-0.1, 0.1)
    return cases


def loss_cases(seed: int = 0) -> dict:
    gen = torch.Generator().manual_seed(seed)

    def away_from_ties(a):
        # offsets of at least 0.05 keep every |a - b| term far from its kink
        shift = 0.05 + 0.1 * torch.rand(a.shape, generator=gen, dtype=torch.float64)
        sign = torch.where(torch.rand(a.shape, generator=gen) < 0.5, -1.0, 1.0).double()
        return a + sign * shift

    sr, hr = _toy_inputs(gen, (2, 3, 8, 8), (2, 3, 8, 8))
    code = torch.randn(2, 9, generator=gen, dtype=torch.float64)
    k5 = torch.rand(2, 5, 5, generator=gen, dtype=torch.float64)
    lr = torch.rand(2, 3, 4, 4, generator=gen, dtype=torch.float64)
    kern = torch.softmax(torch.randn(2, 25, generator=gen, dtype=torch.float64), 1).reshape(2, 5, 5)
    return {
        "sr_loss": (L.sr_loss, [sr, hr]),
        "kernel_code_loss": (L.kernel_code_loss, [code, away_from_ties(code)]),
        "kernel_loss": (L.kernel_loss, [k5, away_from_ties(k5)]),
        "lr_loss": (lambda a, kk, b: L.lr_loss(a, kk, b, 2, "area"), [sr, kern, lr]),
        "degrade_area": (lambda a, kk: degrade_tensor(a, kk, 2, "area"), [sr, kern]),
        "degrade_bicubic": (lambda a, kk: degrade_tensor(a, kk, 2, "bicubic"), [sr, kern]),
    }


def gradient_checks(seed: int = 0) -> list[CheckResult]:
    results = []
    for name, (module, inputs) in block_cases(seed).items():
        err = module_gradient_error(module, inputs, seed)
        results.append(CheckResult(f"grad {name}", err <= GRAD_RTOL, err, GRAD_RTOL))
    for name, (fn, inputs) in loss_cases(seed).items():
        err = relative_gradient_error(fn, inputs, seed)
        results.append(CheckResult(f"grad {name}", err <= GRAD_RTOL, err, GRAD_RTOL))
    return results


def degradation_oracle_check(cases: int = 100, seed: int = 0, tol: float = 1e-6) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        hr = rng.random((1, 16, 16))
        kernel = rng.random((21, 21))
        kernel /= kernel.sum()
        fast = degrade(hr, kernel, 4, "decimate")
        worst = max(worst, float(np.abs(fast - brute_force_degrade(hr, kernel, 4)).max()))
    return CheckResult(f"degrade vs brute force ({cases} cases)", worst <= tol, worst, tol)


def gaussian_oracle_check(tol: float = 1e-12) -> CheckResult:
    worst = 0.0
    sigmas = (0.2, 1.3, 2.6, 4.0)
    for sx in sigmas:
        for sy in sigmas:
            for theta in (0.0, math.pi / 4, math.pi / 2):
                got = gaussian_kernel(GaussianSpec(sx, sy, theta), 21)
                worst = max(worst, float(np.abs(got - analytic_gaussian(sx, sy, theta, 21)).max()))
    return CheckResult("gaussian kernel vs analytic density", worst <= tol, worst, tol)


def selfcheck(quick: bool = False) -> list[CheckResult]:
    """Run the oracle suites; ``quick`` trims the degradation cases to 10."""
    t0 = time.time()
    results = [degradation_oracle_check(10 if quick else 100), gaussian_oracle_check()]
    results += gradient_checks()
    results.append(CheckResult("selfcheck runtime (s)", True, time.time() - t0, math.inf))
    return results
