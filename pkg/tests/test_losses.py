import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from kbpn.config import TrainConfig, loads
from kbpn.degradation import GaussianSpec, degrade_tensor, gaussian_kernel
from kbpn.gradcheck import GRAD_RTOL, loss_cases, relative_gradient_error
from kbpn.losses import (
    LossWeights,
    kernel_code_loss,
    kernel_loss,
    lr_loss,
    sr_loss,
    total_loss,
)
from kbpn.networks import ForwardResult


def d(*shape, seed=0):
    return torch.rand(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def test_sr_loss_examples():
    hr = d(2, 3, 8, 8)
    assert sr_loss(hr, hr) == 0
    assert float(sr_loss(hr + 0.1, hr)) == pytest.approx(0.01, abs=1e-12)


def test_sr_loss_matches_loop():
    a, b = d(1, 3, 5, 4, seed=1), d(1, 3, 5, 4, seed=2)
    total = 0.0
    for c in range(3):
        for y in range(5):
            for x in range(4):
                total += (float(a[0, c, y, x]) - float(b[0, c, y, x])) ** 2
    assert float(sr_loss(a, b)) == pytest.approx(total / 60, abs=1e-12)


def test_code_loss_examples():
    code = d(3, 9)
    assert kernel_code_loss(code, code) == 0
    assert float(kernel_code_loss(code + 2, code)) == pytest.approx(2.0, abs=1e-12)
    a, b = d(9, seed=3), d(9, seed=4)
    assert float(kernel_code_loss(a, b)) == pytest.approx(sum(abs(float(x - y)) for x, y in zip(a, b)) / 9, abs=1e-12)


def test_kernel_loss_examples():
    k = 21
    a = torch.from_numpy(gaussian_kernel(GaussianSpec.isotropic(1.0), k))
    b = torch.from_numpy(gaussian_kernel(GaussianSpec(4.0, 0.3, 1.0), k))
    assert kernel_loss(a, a) == 0
    assert float(kernel_loss(a, b)) <= 2 / k ** 2
    ref = sum(abs(float(a[i, j] - b[i, j])) for i in range(k) for j in range(k)) / k ** 2
    assert float(kernel_loss(a, b)) == pytest.approx(ref, abs=1e-15)


@pytest.mark.parametrize("mode", ["decimate", "area", "bicubic"])
def test_lr_loss_self_consistent(mode):
    sr = d(2, 3, 16, 16)
    kern = torch.from_numpy(gaussian_kernel(GaussianSpec.isotropic(1.3), 7))
    lr = degrade_tensor(sr, kern, 4, mode)
    assert float(lr_loss(sr, kern, lr, 4, mode)) <= 1e-6
    assert float(lr_loss(sr, kern, lr - 0.1, 4, mode)) == pytest.approx(0.01, abs=1e-12)


def test_lr_loss_prefactor_identity():
    sr, lr = d(1, 3, 16, 12, seed=5), d(1, 3, 4, 3, seed=6)
    kern = torch.from_numpy(gaussian_kernel(GaussianSpec.isotropic(1.3), 5))
    s, (c, h, w) = 4, sr.shape[1:]
    sq = (degrade_tensor(sr, kern, s, "area") - lr) ** 2
    literal = s ** 2 / (c * h * w) * float(sq.sum())
    assert abs(literal - float(lr_loss(sr, kern, lr, s, "area"))) <= 1e-12


def test_lr_loss_shape_error():
    with pytest.raises(ValueError):
        lr_loss(d(1, 3, 16, 16), torch.ones(1, 1, 1, dtype=torch.float64), d(1, 3, 5, 4), 4)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_losses_nonnegative_zero_iff_equal(seed):
    a, b = d(1, 3, 8, 8, seed=seed), d(1, 3, 8, 8, seed=seed + 1)
    for fn in (sr_loss, kernel_code_loss, kernel_loss):
        assert float(fn(a, b)) > 0
        assert float(fn(a, a)) == 0


def test_l1_subgradient_at_ties_is_zero():
    a = torch.zeros(4, dtype=torch.float64, requires_grad=True)
    kernel_code_loss(a, torch.zeros(4, dtype=torch.float64)).backward()
    assert torch.equal(a.grad, torch.zeros(4, dtype=torch.float64))


@pytest.mark.parametrize("name", list(loss_cases()))
def test_loss_gradients(name):
    fn, inputs = loss_cases()[name]
    assert relative_gradient_error(fn, inputs) <= GRAD_RTOL


def _perfect(variant):
    hr = d(2, 3, 16, 16)
    kern = torch.from_numpy(np.stack([gaussian_kernel(GaussianSpec.isotropic(1.0), 5)] * 2))
    lr = degrade_tensor(hr, kern, 4, "area")
    code = d(2, 4)
    out_kernel = {"dbpn_bl": None, "kcbpn": code, "kbpn": kern}[variant]
    return ForwardResult(hr.clone(), out_kernel), {"hr": hr, "kernel": kern, "lr": lr, "code": code}


@pytest.mark.parametrize("variant", ["dbpn_bl", "kcbpn", "kbpn"])
def test_total_perfect_prediction_is_zero(variant):
    result, targets = _perfect(variant)
    loss, parts = total_loss(result, targets, LossWeights(), variant)
    assert float(loss) <= 1e-12
    assert set(parts.raw) == {"dbpn_bl": {"L_SR"}, "kcbpn": {"L_SR", "L_KC"},
                              "kbpn": {"L_SR", "L_K", "L_LR"}}[variant]


@pytest.mark.parametrize("variant", ["dbpn_bl", "kcbpn", "kbpn"])
def test_breakdown_sums_to_total(variant):
    result, targets = _perfect(variant)
    result.sr = result.sr + 0.05 * d(2, 3, 16, 16, seed=9)
    if result.kernel is not None:
        result.kernel = result.kernel * 0.9 + 0.1 / result.kernel[0].numel()
    w = LossWeights(1.0, 5.0, 0.1)
    loss, parts = total_loss(result, targets, w, variant)
    assert abs(sum(parts.weighted.values()) - parts.total) <= 1e-12
    assert parts.total == float(loss)
    scale = {"L_SR": w.w_sr, "L_KC": w.w_kernel, "L_K": w.w_kernel, "L_LR": w.w_lr}
    for name, raw in parts.raw.items():
        assert parts.weighted[name] == pytest.approx(scale[name] * raw, rel=1e-15)


def test_missing_targets():
    result, targets = _perfect("kbpn")
    with pytest.raises(ValueError, match="lack"):
        total_loss(result, {"hr": targets["hr"]}, LossWeights(), "kbpn")
    with pytest.raises(ValueError):
        LossWeights(w_sr=-1)


def test_default_weights_from_config():
    assert TrainConfig().loss == LossWeights(1.0, 5.0, 0.1)
    cfg = loads("[loss]\nw_sr = 1\nw_kernel = 5\nw_lr = 0.1\n")
    assert (cfg.loss.w_sr, cfg.loss.w_kernel, cfg.loss.w_lr) == (1.0, 5.0, 0.1)
