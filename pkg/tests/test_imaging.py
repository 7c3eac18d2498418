import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kbpn.imaging import (
    BT601,
    ImageError,
    PatchSpec,
    load_image,
    quantize,
    random_patch_pair,
    rgb_to_y,
    save_image,
)


def test_white_and_black_png(tmp_path):
    save_image(np.ones((3, 2, 2)), tmp_path / "w.png")
    save_image(np.zeros((3, 2, 2)), tmp_path / "b.png")
    assert np.all(load_image(tmp_path / "w.png") == 1.0)
    assert np.all(load_image(tmp_path / "b.png") == 0.0)


@pytest.mark.parametrize("depth", [8, 16])
def test_round_trip_within_quantization(tmp_path, rng, depth):
    img = rng.random((3, 17, 23))
    save_image(img, tmp_path / "x.png", bit_depth=depth)
    back = load_image(tmp_path / "x.png")
    top = (1 << depth) - 1
    assert np.abs(back - img).max() <= 0.5 / top + 1e-12
    np.testing.assert_array_equal(back, quantize(img, depth))


def test_channel_order_is_rgb(tmp_path):
    img = np.zeros((3, 2, 2))
    img[0] = 1.0
    save_image(img, tmp_path / "red.png")
    raw = cv2.imread(str(tmp_path / "red.png"))
    assert raw[0, 0].tolist() == [0, 0, 255]  # cv2 stores BGR
    np.testing.assert_array_equal(load_image(tmp_path / "red.png"), img)


def test_grayscale_png(tmp_path, rng):
    img = quantize(rng.random((1, 5, 4)))
    save_image(img, tmp_path / "g.png")
    np.testing.assert_array_equal(load_image(tmp_path / "g.png"), img)


def test_rejects_non_png(tmp_path):
    path = tmp_path / "x.jpg"
    cv2.imwrite(str(path), np.zeros((4, 4, 3), np.uint8))
    with pytest.raises(ImageError, match="not a PNG"):
        load_image(path)
    with pytest.raises(ImageError):
        load_image(tmp_path / "missing.png")


def test_rejects_alpha_channel(tmp_path):
    path = tmp_path / "rgba.png"
    cv2.imwrite(str(path), np.zeros((4, 4, 4), np.uint8))
    with pytest.raises(ImageError, match="channel"):
        load_image(path)


def test_luma_white_black_red():
    white, black = np.ones((3, 1, 1)), np.zeros((3, 1, 1))
    assert rgb_to_y(white)[0, 0, 0] == pytest.approx(1.0, abs=1e-6)
    assert rgb_to_y(black)[0, 0, 0] == 0.0
    red = np.zeros((3, 1, 1))
    red[0] = 1
    assert rgb_to_y(red)[0, 0, 0] == pytest.approx(0.299, abs=1e-12)


def test_studio_swing_range():
    y_white = rgb_to_y(np.ones((3, 1, 1)), swing="studio")[0, 0, 0]
    y_black = rgb_to_y(np.zeros((3, 1, 1)), swing="studio")[0, 0, 0]
    assert y_white == pytest.approx(235 / 255, abs=1e-6)
    assert y_black == pytest.approx(16 / 255, abs=1e-12)
    # normalized back to [0, 1], white is 1
    assert (y_white - 16 / 255) / (219 / 255) == pytest.approx(1.0, abs=1e-6)
    red = np.zeros((3, 1, 1))
    red[0] = 1
    assert rgb_to_y(red, swing="studio")[0, 0, 0] == pytest.approx((16 + 65.481) / 255, abs=1e-12)


def test_luma_needs_three_channels():
    with pytest.raises(ImageError):
        rgb_to_y(np.zeros((1, 2, 2)))


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0, 1), seed=st.integers(0, 2 ** 32 - 1))
def test_luma_is_linear(a, seed):
    img = np.random.default_rng(seed).random((3, 4, 4))
    np.testing.assert_allclose(rgb_to_y(a * img), a * rgb_to_y(img), atol=1e-12)
    assert np.isclose(BT601.sum(), 1.0)


def test_patch_is_deterministic(rng):
    hr = rng.random((3, 50, 60))
    spec = PatchSpec(8, 4)
    a, ra = random_patch_pair(hr, spec, 99)
    b, rb = random_patch_pair(hr, spec, 99)
    assert a.tobytes() == b.tobytes() and ra == rb
    assert a.shape == (3, 32, 32)


def test_full_image_when_patch_fills_it(rng):
    s = 2
    hr = rng.random((3, 48 * s, 48 * s))
    patch, rec = random_patch_pair(hr, PatchSpec(48, s, hflip=False, vflip=False), 3)
    np.testing.assert_array_equal(patch, hr)
    assert (rec.top, rec.left, rec.hflip, rec.vflip) == (0, 0, False, False)


def test_patch_matches_replayed_slice():
    y, x = np.mgrid[0:40, 0:40]
    gradient = np.stack([y / 39.0, x / 39.0, (x + y) / 78.0])
    spec = PatchSpec(4, 2)
    for seed in range(100):
        patch, rec = random_patch_pair(gradient, spec, seed)
        replay = np.random.default_rng(seed)
        top, left = int(replay.integers(0, 33)), int(replay.integers(0, 33))
        assert (top, left) == (rec.top, rec.left)
        ref = gradient[:, top:top + 8, left:left + 8]
        if rec.hflip:
            ref = ref[:, :, ::-1]
        if rec.vflip:
            ref = ref[:, ::-1, :]
        np.testing.assert_array_equal(patch, ref)
        assert patch.mean() == pytest.approx(ref.mean(), abs=0)


def test_patch_too_large(rng):
    with pytest.raises(ImageError, match="does not fit"):
        random_patch_pair(rng.random((3, 20, 20)), PatchSpec(8, 4), 0)
