import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from kbpn.degradation import (
    GaussianSpec,
    KernelError,
    check_kernel,
    decode_kernel,
    default_pca,
    degrade,
    degrade_tensor,
    delta_kernel,
    encode_kernel,
    fit_kernel_pca,
    gaussian_kernel,
    load_kernel,
    load_pca,
    sample_gaussian_spec,
    sample_training_kernels,
    save_kernel,
    save_pca,
    stretch,
    blur,
    downsample,
)
from kbpn.oracles import analytic_gaussian, brute_force_degrade, eigen_explained_variance

sigmas = st.floats(0.05, 10.0)
angles = st.floats(0.0, math.pi)


def random_kernel(rng, k):
    kern = rng.random((k, k))
    return kern / kern.sum()


# ---------------------------------------------------------------- kernels

@settings(max_examples=60, deadline=None)
@given(sigma=sigmas, theta=angles)
def test_isotropic_kernel_ignores_angle(sigma, theta):
    a = gaussian_kernel(GaussianSpec(sigma, sigma, theta), 21)
    b = gaussian_kernel(GaussianSpec(sigma, sigma, 0.0), 21)
    assert np.abs(a - b).max() <= 1e-12


@settings(max_examples=60, deadline=None)
@given(sx=sigmas, sy=sigmas, theta=angles)
def test_axis_swap_symmetry(sx, sy, theta):
    a = gaussian_kernel(GaussianSpec(sx, sy, theta), 21)
    b = gaussian_kernel(GaussianSpec(sy, sx, theta + math.pi / 2), 21)
    assert np.abs(a - b).max() <= 1e-12


@settings(max_examples=60, deadline=None)
@given(sx=st.floats(0.01, 10.0), sy=st.floats(0.01, 10.0), theta=st.floats(-10, 10),
       k=st.sampled_from([3, 5, 11, 21]))
def test_gaussian_kernel_is_valid(sx, sy, theta, k):
    kern = gaussian_kernel(GaussianSpec(sx, sy, theta), k)
    check_kernel(kern)
    assert kern.shape == (k, k)


def test_near_delta_at_smallest_sigma():
    kern = gaussian_kernel(GaussianSpec.isotropic(0.2), 21)
    oracle = analytic_gaussian(0.2, 0.2, 0.0, 21)
    assert kern[10, 10] > 0.99
    assert kern[10, 10] == pytest.approx(oracle[10, 10], abs=1e-15)


def test_axis_orientation():
    # sigma_x is the spread along columns at theta = 0
    kern = gaussian_kernel(GaussianSpec(3.0, 0.5, 0.0), 21)
    assert kern[10, 14] > kern[14, 10]


@pytest.mark.parametrize("spec,k", [(GaussianSpec(0, 1), 21), (GaussianSpec(1, -1), 21), (GaussianSpec(1, 1), 20)])
def test_gaussian_kernel_errors(spec, k):
    with pytest.raises(KernelError):
        gaussian_kernel(spec, k)


@pytest.mark.parametrize("bad", [np.ones((3, 3)), np.ones((4, 4)) / 16, np.ones((3, 5)) / 15,
                                 np.array([[0, 0, 0], [0, 1.5, 0], [0, -0.5, 0]])])
def test_check_kernel_rejects(bad):
    with pytest.raises(KernelError):
        check_kernel(bad)


def test_training_draws_respect_ranges():
    rng = np.random.default_rng(0)
    for _ in range(200):
        spec = sample_gaussian_spec(rng, "anisotropic", (0.2, 4.0))
        assert 0.2 <= spec.sigma_x <= 4.0 and 0.2 <= spec.sigma_y <= 4.0
        assert 0.0 <= spec.theta < math.pi
        iso = sample_gaussian_spec(rng, "isotropic", (0.2, 4.0))
        assert iso.sigma_x == iso.sigma_y and iso.theta == 0.0


# ---------------------------------------------------------------- degradation

@pytest.mark.parametrize("mode", ["decimate", "area", "bicubic"])
@pytest.mark.parametrize("s", [1, 2, 4])
def test_constant_image_stays_constant(rng, mode, s):
    hr = np.full((3, 32, 32), 0.37)
    lr = degrade(hr, random_kernel(rng, 21), s, mode)
    assert lr.shape == (3, 32 // s, 32 // s)
    np.testing.assert_allclose(lr, 0.37, atol=1e-12)


@pytest.mark.parametrize("mode", ["decimate", "area", "bicubic"])
def test_delta_kernel_scale_one_is_identity(rng, mode):
    hr = rng.random((3, 24, 24))
    np.testing.assert_allclose(degrade(hr, delta_kernel(21), 1, mode), hr, atol=1e-9)


def test_matches_brute_force(rng):
    for _ in range(10):
        hr = rng.random((1, 16, 16))
        kern = random_kernel(rng, 21)
        np.testing.assert_allclose(degrade(hr, kern, 4, "decimate"), brute_force_degrade(hr, kern, 4), atol=1e-6)


def test_brute_force_uses_flipped_kernel():
    # an off-center delta shifts the image towards +row under true convolution
    hr = np.zeros((1, 8, 8))
    hr[0, 3, 3] = 1.0
    kern = np.zeros((3, 3))
    kern[2, 1] = 1.0
    out = degrade(hr, kern, 1, "decimate")
    assert out[0, 4, 3] == pytest.approx(1.0)
    np.testing.assert_allclose(out, brute_force_degrade(hr, kern, 1), atol=1e-12)


@pytest.mark.parametrize("mode", ["area", "decimate"])
def test_fast_path_matches_blur_then_downsample(rng, mode):
    x = torch.from_numpy(rng.random((2, 3, 24, 24)))
    kern = torch.from_numpy(np.stack([random_kernel(rng, 9), random_kernel(rng, 9)]))
    slow = downsample(blur(x, kern), 4, mode)
    np.testing.assert_allclose(degrade_tensor(x, kern, 4, mode).numpy(), slow.numpy(), atol=1e-13)


def test_area_mode_is_block_mean(rng):
    hr = rng.random((3, 16, 16))
    lr = degrade(hr, delta_kernel(5), 4, "area")
    np.testing.assert_allclose(lr, hr.reshape(3, 4, 4, 4, 4).mean(axis=(2, 4)), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(-3, 3), beta=st.floats(-3, 3), seed=st.integers(0, 2 ** 32 - 1))
def test_degrade_is_linear(alpha, beta, seed):
    gen = np.random.default_rng(seed)
    a, b = gen.random((3, 16, 16)), gen.random((3, 16, 16))
    kern = random_kernel(gen, 7)
    lhs = degrade(alpha * a + beta * b, kern, 4, "decimate")
    rhs = alpha * degrade(a, kern, 4, "decimate") + beta * degrade(b, kern, 4, "decimate")
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), mode=st.sampled_from(["decimate", "area", "bicubic"]))
def test_degrade_commutes_with_channel_permutation(seed, mode):
    gen = np.random.default_rng(seed)
    hr = gen.random((3, 16, 16))
    perm = gen.permutation(3)
    kern = random_kernel(gen, 5)
    np.testing.assert_allclose(degrade(hr[perm], kern, 2, mode), degrade(hr, kern, 2, mode)[perm], atol=1e-12)


def test_degrade_errors(rng):
    with pytest.raises(KernelError, match="divisible"):
        degrade(rng.random((3, 18, 16)), delta_kernel(5), 4)
    with pytest.raises(KernelError):
        degrade(rng.random((3, 16, 16)), np.ones((5, 5)), 4)


# ---------------------------------------------------------------- kernel codes

def test_pca_identical_samples():
    kern = gaussian_kernel(GaussianSpec.isotropic(1.5), 9)
    pca = fit_kernel_pca([kern] * 12, 3)
    np.testing.assert_allclose(pca.mean.reshape(9, 9), kern, atol=1e-15)
    np.testing.assert_allclose(encode_kernel(kern, pca), 0.0, atol=1e-15)


def test_pca_full_rank_reconstruction(rng):
    samples = [random_kernel(rng, 5) for _ in range(60)]
    pca = fit_kernel_pca(samples, 25)
    for kern in samples:
        np.testing.assert_allclose(decode_kernel(encode_kernel(kern, pca), pca), kern, atol=1e-8)


def test_pca_basis_orthonormal_and_signed():
    pca = fit_kernel_pca(sample_training_kernels(300, 11, "anisotropic", seed=3), 9)
    np.testing.assert_allclose(pca.basis @ pca.basis.T, np.eye(9), atol=1e-8)
    rows = np.arange(9)
    assert np.all(pca.basis[rows, np.abs(pca.basis).argmax(axis=1)] > 0)


def test_pca_explained_variance_matches_eigen_oracle():
    samples = sample_training_kernels(500, 21, "anisotropic", seed=11)
    pca = fit_kernel_pca(samples, 9)
    np.testing.assert_allclose(pca.explained_variance_ratio, eigen_explained_variance(samples, 9), atol=1e-6)


def test_pca_needs_enough_samples(rng):
    with pytest.raises(KernelError):
        fit_kernel_pca([random_kernel(rng, 5)] * 3, 4)


def test_encode_mean_is_zero_and_projection_property():
    pca = default_pca(k=11, a=9, n=800, seed=1)
    np.testing.assert_allclose(encode_kernel(pca.mean.reshape(11, 11), pca), 0.0, atol=1e-15)
    kern = gaussian_kernel(GaussianSpec.isotropic(2.0), 11)
    code = encode_kernel(kern, pca)
    recon = pca.mean + pca.basis.T @ code
    assert recon.min() >= 0  # clamp inactive, so decode is a pure projection up to renormalization
    redone = encode_kernel(decode_kernel(code, pca) * recon.sum(), pca)
    np.testing.assert_allclose(redone, code, atol=1e-8)


def test_code_beats_mean_kernel_on_held_out():
    pca = default_pca(k=21, a=9, n=2000, seed=0)
    rng = np.random.default_rng(99)
    mean = pca.mean.reshape(21, 21)
    for _ in range(20):
        kern = gaussian_kernel(sample_gaussian_spec(rng, "isotropic"), 21)
        approx = decode_kernel(encode_kernel(kern, pca), pca)
        check_kernel(approx)
        assert np.abs(approx - kern).sum() < np.abs(mean - kern).sum()


def test_code_shape_errors():
    pca = default_pca(k=5, a=3, n=50)
    with pytest.raises(KernelError):
        encode_kernel(np.ones((7, 7)) / 49, pca)
    with pytest.raises(KernelError):
        decode_kernel(np.zeros(4), pca)


# ---------------------------------------------------------------- stretch

def test_stretch_examples():
    np.testing.assert_array_equal(stretch(np.array([0.0]), 3, 5), np.zeros((1, 3, 5)))
    vec = np.random.default_rng(0).random(441)
    dmap = stretch(vec, 12, 12)
    assert dmap.shape == (441, 12, 12)
    assert np.all(dmap == vec[:, None, None])
    # summation rounding is the only source of difference
    np.testing.assert_allclose(dmap.mean(axis=(1, 2)), vec, rtol=1e-15, atol=0)


@settings(max_examples=40, deadline=None)
@given(d=st.integers(1, 30), h=st.integers(1, 9), w=st.integers(1, 9), seed=st.integers(0, 1000))
def test_stretch_round_trip(d, h, w, seed):
    vec = np.random.default_rng(seed).normal(size=d)
    dmap = stretch(vec, h, w)
    np.testing.assert_allclose(stretch(dmap.mean(axis=(1, 2)), h, w), dmap, rtol=1e-15, atol=1e-300)


def test_stretch_torch_batch():
    vec = torch.randn(2, 5)
    out = stretch(vec, 3, 4)
    assert out.shape == (2, 5, 3, 4)
    torch.testing.assert_close(out.mean(dim=(2, 3)), vec, rtol=1e-6, atol=0)


# ---------------------------------------------------------------- files

def test_kernel_file_round_trip(tmp_path):
    spec = GaussianSpec(2.6, 4.0, 0.3)
    kern = gaussian_kernel(spec, 21)
    save_kernel(tmp_path / "K.bin", kern, spec, "area")
    assert (tmp_path / "K.bin").stat().st_size == 21 * 21 * 8
    np.testing.assert_array_equal(np.fromfile(tmp_path / "K.bin", dtype="<f8").reshape(21, 21), kern)
    back, meta = load_kernel(tmp_path / "K.bin")
    np.testing.assert_array_equal(back, kern)
    assert meta == {"k": 21, "sigma_x": 2.6, "sigma_y": 4.0, "theta": 0.3, "down_mode": "area"}


def test_kernel_file_size_mismatch(tmp_path):
    save_kernel(tmp_path / "K.bin", delta_kernel(5))
    (tmp_path / "K.bin.json").write_text(json.dumps({"k": 7}))
    with pytest.raises(KernelError):
        load_kernel(tmp_path / "K.bin")


def test_pca_file_round_trip(tmp_path):
    pca = default_pca(k=7, a=4, n=100, seed=5)
    save_pca(tmp_path / "pca.bin", pca)
    back = load_pca(tmp_path / "pca.bin")
    np.testing.assert_array_equal(back.basis, pca.basis)
    np.testing.assert_array_equal(back.mean, pca.mean)
    assert json.loads((tmp_path / "pca.bin.json").read_text())["seed"] == 5
    assert (back.a, back.k, back.seed) == (4, 7, 5)
