"""Resize, sharpen, and PNG I/O behavior."""

import numpy as np
import pytest

from forgenet import imaging
from forgenet.errors import InputError, ShapeError


def brute_bilinear(img, out_h, out_w):
    """Per-pixel half-pixel-center bilinear, the resize oracle."""
    arr = np.asarray(img, np.float64)
    h, w = arr.shape[:2]
    out = np.zeros((out_h, out_w) + arr.shape[2:])
    for i in range(out_h):
        sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            top = arr[y0, x0] * (1 - fx) + arr[y0, x1] * fx
            bot = arr[y1, x0] * (1 - fx) + arr[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


class TestResizeBilinear:
    def test_identity_is_byte_exact(self):
        img = np.random.default_rng(0).integers(0, 256, (9, 7, 3), dtype=np.uint8)
        out = imaging.resize_bilinear(img, 9, 7)
        np.testing.assert_array_equal(out, img)
        assert out is not img

    def test_constant_stays_constant(self):
        img = np.full((5, 5, 3), 77, np.uint8)
        for dims in ((3, 9), (17, 2), (1, 1)):
            assert (imaging.resize_bilinear(img, *dims) == 77).all()

    def test_checkerboard_to_single_pixel(self):
        img = np.array([[0, 255], [255, 0]], np.uint8)
        out = imaging.resize_bilinear(img, 1, 1)
        assert out[0, 0] == 128  # mean 127.5 rounds half-up

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(1)
        for (h, w, oh, ow) in ((6, 8, 11, 5), (10, 10, 3, 3), (4, 4, 9, 9)):
            img = rng.uniform(0, 255, (h, w, 3))
            got = imaging.resize_bilinear_float(img, oh, ow)
            np.testing.assert_allclose(got, brute_bilinear(img, oh, ow),
                                       rtol=1e-12, atol=1e-12)

    def test_preserves_value_range(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        for dims in ((7, 31), (64, 64), (3, 3)):
            out = imaging.resize_bilinear(img, *dims)
            assert out.dtype == np.uint8
            assert int(out.min()) >= int(img.min()) - 1
            assert int(out.max()) <= int(img.max()) + 1

    def test_bad_dims(self):
        with pytest.raises(ShapeError):
            imaging.resize_bilinear(np.zeros((4, 4, 3), np.uint8), 0, 4)


class TestResizeNearest:
    def test_keeps_binary(self):
        rng = np.random.default_rng(3)
        mask = (rng.uniform(size=(20, 20)) > 0.5).astype(np.uint8)
        for dims in ((7, 13), (40, 41), (20, 20)):
            out = imaging.resize_nearest(mask, *dims)
            assert set(np.unique(out)) <= {0, 1}
            assert out.shape == dims

    def test_identity(self):
        mask = np.eye(5, dtype=np.uint8)
        np.testing.assert_array_equal(imaging.resize_nearest(mask, 5, 5), mask)

    def test_upscale_blocks(self):
        mask = np.array([[0, 1], [1, 0]], np.uint8)
        out = imaging.resize_nearest(mask, 4, 4)
        np.testing.assert_array_equal(out[:2, :2], 0)
        np.testing.assert_array_equal(out[:2, 2:], 1)


class TestSharpen:
    def test_zero_strength_identity(self):
        img = np.random.default_rng(4).integers(0, 256, (8, 8, 3), dtype=np.uint8)
        np.testing.assert_array_equal(imaging.sharpen(img, 0.0), img)

    def test_constant_unchanged(self):
        img = np.full((10, 10, 3), 99, np.uint8)
        for s in (0.5, 1.0, 3.0):
            np.testing.assert_array_equal(imaging.sharpen(img, s), img)

    def test_bright_pixel_gains_contrast(self):
        img = np.full((5, 5, 3), 100, np.uint8)
        img[2, 2] = 200
        out = imaging.sharpen(img, 1.0)
        # Hand evaluation: blur(center) = 100 + 100 * (4/16) = 125,
        # sharpened center = 200 + 1.0 * (200 - 125) = 275 -> clamps to 255.
        assert (out[2, 2] == 255).all()
        # Direct neighbors lose brightness: blur = 100 + 100*(2/16) = 112.5,
        # sharpened = 100 - 12.5 = 87.5 -> rounds to 88.
        assert (out[1, 2] == 88).all() and (out[2, 1] == 88).all()
        np.testing.assert_array_equal(out[0, 0], 100)  # far corner untouched

    def test_clamped_to_byte_range(self):
        rng = np.random.default_rng(5)
        img = rng.integers(0, 256, (12, 12, 3), dtype=np.uint8)
        out = imaging.sharpen(img, 5.0)
        assert out.dtype == np.uint8

    def test_negative_strength_rejected(self):
        with pytest.raises(ShapeError):
            imaging.sharpen(np.zeros((4, 4, 3), np.uint8), -1.0)


class TestPngIO:
    def test_rgb_roundtrip(self, tmp_path):
        img = np.random.default_rng(6).integers(0, 256, (14, 9, 3), dtype=np.uint8)
        path = tmp_path / "img.png"
        imaging.save_png(path, img)
        np.testing.assert_array_equal(imaging.load_image(path), img)

    def test_probability_mask_roundtrip(self, tmp_path):
        mask = np.random.default_rng(7).uniform(0, 1, (10, 10)).astype(np.float32)
        path = tmp_path / "mask.png"
        imaging.save_mask_png(path, mask)
        from PIL import Image
        stored = np.asarray(Image.open(path))
        want = np.floor(mask * 255.0 + 0.5).astype(np.uint8)
        np.testing.assert_array_equal(stored, want)

    def test_binary_mask_threshold_on_load(self, tmp_path):
        gray = np.zeros((6, 6), np.uint8)
        gray[:3] = 200
        gray[3] = 127  # at threshold -> pristine
        gray[4] = 128  # above -> forged
        path = tmp_path / "gt.png"
        from PIL import Image
        Image.fromarray(gray).save(path)
        mask = imaging.load_mask(path)
        assert (mask[:3] == 1).all()
        assert (mask[3] == 0).all()
        assert (mask[4] == 1).all()

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            imaging.load_image(tmp_path / "nope.png")

    def test_undecodable_file(self, tmp_path):
        path = tmp_path / "junk.png"
        path.write_bytes(b"not an image at all")
        with pytest.raises(InputError):
            imaging.load_image(path)


class TestHelpers:
    def test_round_half_up(self):
        vals = np.array([0.5, 1.5, 2.4, 2.5, -0.5])
        np.testing.assert_array_equal(imaging.round_half_up(vals),
                                      [1.0, 2.0, 2.0, 3.0, 0.0])

    def test_psnr(self):
        a = np.zeros((8, 8), np.float64)
        assert imaging.psnr(a, a) == float("inf")
        b = a + 16.0
        # mse = 256 -> psnr = 10*log10(255^2/256) = 24.05...
        assert imaging.psnr(a, b) == pytest.approx(24.0486, abs=1e-3)
