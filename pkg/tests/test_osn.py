"""Degradation profiles: parsing, built-ins, and pipeline behavior."""

import numpy as np
import pytest

from forgenet import imaging
from forgenet.errors import ConfigError, InputError
from forgenet.osn import (BUILTIN_PROFILES, JpegStep, OsnProfile, ResizeStep,
                          SharpenStep, degrade, degrade_mask, get_profile,
                          load_profile, profile_from_dict, save_profile)


def make_image(seed=0, h=64, w=48):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.empty((h, w, 3))
    for c in range(3):
        f = rng.uniform(0.05, 0.15)
        img[:, :, c] = 128 + 60 * np.sin(f * yy + c) + 40 * np.cos(f * xx)
    return np.clip(img, 0, 255).astype(np.uint8)


class TestProfileValidation:
    def test_empty_profile_rejected(self):
        with pytest.raises(ConfigError):
            OsnProfile("empty", ())

    def test_resize_step_needs_exactly_one_mode(self):
        with pytest.raises(ConfigError):
            ResizeStep()
        with pytest.raises(ConfigError):
            ResizeStep(scale=0.5, max_side=100)
        with pytest.raises(ConfigError):
            ResizeStep(scale=-1.0)

    def test_jpeg_quality_bounds(self):
        with pytest.raises(ConfigError):
            JpegStep(0)
        with pytest.raises(ConfigError):
            JpegStep(101)

    def test_builtins_present_and_valid(self):
        assert set(BUILTIN_PROFILES) == {"facebook-like", "whatsapp-like",
                                         "weibo-like", "wechat-like"}
        wa = BUILTIN_PROFILES["whatsapp-like"]
        assert [type(s) for s in wa.steps] == [ResizeStep, SharpenStep, JpegStep]
        assert wa.steps[0].scale == 0.7
        assert wa.steps[2].quality == 75
        fb = BUILTIN_PROFILES["facebook-like"]
        assert fb.steps[0].max_side == 960
        assert fb.steps[1].quality == 72
        assert BUILTIN_PROFILES["weibo-like"].steps[0].quality == 80
        assert BUILTIN_PROFILES["wechat-like"].steps[0].max_side == 1080


class TestProfileIO:
    def test_json_roundtrip(self, tmp_path):
        profile = OsnProfile("custom", (ResizeStep(scale=0.5),
                                        SharpenStep(0.8), JpegStep(66)))
        path = tmp_path / "p.json"
        save_profile(profile, path)
        loaded = load_profile(path)
        assert loaded == profile

    def test_bare_step_list(self):
        profile = profile_from_dict(
            [{"op": "resize", "max_side": 640}, {"op": "jpeg", "quality": 50}])
        assert profile.steps[0].max_side == 640

    def test_unknown_step_rejected(self):
        with pytest.raises(ConfigError):
            profile_from_dict([{"op": "vignette", "amount": 1}])

    def test_get_profile_name_or_path(self, tmp_path):
        assert get_profile("weibo-like") is BUILTIN_PROFILES["weibo-like"]
        path = tmp_path / "q.json"
        save_profile(OsnProfile("q", (JpegStep(42),)), path)
        assert get_profile(str(path)).steps[0].quality == 42
        with pytest.raises(InputError):
            get_profile(str(tmp_path / "missing.json"))


class TestDegrade:
    def test_scale_step_changes_dims(self):
        img = make_image()
        profile = OsnProfile("p", (ResizeStep(scale=0.7),))
        out = degrade(img, profile)
        assert out.shape == (round(64 * 0.7), round(48 * 0.7), 3)

    def test_max_side_only_shrinks(self):
        img = make_image()
        small = OsnProfile("p", (ResizeStep(max_side=1000),))
        assert degrade(img, small).shape == img.shape
        cap = OsnProfile("p", (ResizeStep(max_side=32),))
        out = degrade(img, cap)
        assert max(out.shape[:2]) == 32

    def test_jpeg100_near_lossless(self):
        img = make_image(1)
        out = degrade(img, OsnProfile("p", (JpegStep(100),)))
        assert imaging.psnr(img, out) >= 40.0

    def test_whatsapp_like_pipeline_contract(self):
        img = make_image(2)
        out = degrade(img, BUILTIN_PROFILES["whatsapp-like"])
        assert out.shape == (round(64 * 0.7), round(48 * 0.7), 3)
        assert out.dtype == np.uint8

    def test_deterministic(self):
        img = make_image(3)
        profile = BUILTIN_PROFILES["whatsapp-like"]
        np.testing.assert_array_equal(degrade(img, profile), degrade(img, profile))

    def test_scale_one_identity_dims(self):
        img = make_image(4)
        profile = OsnProfile("p", (ResizeStep(scale=1.0), JpegStep(90)))
        assert degrade(img, profile).shape == img.shape


class TestDegradeMask:
    def test_follows_resizes_and_stays_binary(self):
        rng = np.random.default_rng(5)
        mask = (rng.uniform(size=(64, 48)) > 0.7).astype(np.uint8)
        profile = BUILTIN_PROFILES["whatsapp-like"]
        out = degrade_mask(mask, profile)
        assert out.shape == (round(64 * 0.7), round(48 * 0.7))
        assert set(np.unique(out)) <= {0, 1}

    def test_untouched_by_pixel_steps(self):
        mask = np.eye(16, dtype=np.uint8)
        profile = OsnProfile("p", (SharpenStep(1.0), JpegStep(30)))
        np.testing.assert_array_equal(degrade_mask(mask, profile), mask)
