"""Composable lossy-transmission profiles: resize, sharpen, recompress.

A profile is an ordered list of steps applied deterministically. The
built-in profiles are rough simulations of common platform pipelines, NOT
measured platform behavior; edit or supply profile JSON files to change
the parameters. Ground-truth masks follow resize steps with
nearest-neighbor interpolation so they stay binary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import imaging, jpeg
from .errors import ConfigError, InputError
from .validation import check_rgb8


@dataclass(frozen=True)
class ResizeStep:
    scale: float | None = None
    max_side: int | None = None

    def __post_init__(self):
        if (self.scale is None) == (self.max_side is None):
            raise ConfigError("resize step needs exactly one of scale/max_side")
        if self.scale is not None and self.scale <= 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        if self.max_side is not None and self.max_side < 1:
            raise ConfigError(f"max_side must be >= 1, got {self.max_side}")

    def output_dims(self, h, w):
        if self.scale is not None:
            return max(1, round(h * self.scale)), max(1, round(w * self.scale))
        longest = max(h, w)
        if longest <= self.max_side:  # cap only shrinks
            return h, w
        factor = self.max_side / longest
        return max(1, round(h * factor)), max(1, round(w * factor))

    def to_dict(self):
        if self.scale is not None:
            return {"op": "resize", "scale": self.scale}
        return {"op": "resize", "max_side": self.max_side}


@dataclass(frozen=True)
class SharpenStep:
    strength: float

    def __post_init__(self):
        if self.strength < 0:
            raise ConfigError(f"sharpen strength must be >= 0, got {self.strength}")

    def to_dict(self):
        return {"op": "sharpen", "strength": self.strength}


@dataclass(frozen=True)
class JpegStep:
    quality: int

    def __post_init__(self):
        if not 1 <= self.quality <= 100:
            raise ConfigError(f"jpeg quality must be in [1, 100], got {self.quality}")

    def to_dict(self):
        return {"op": "jpeg", "quality": self.quality}


@dataclass(frozen=True)
class OsnProfile:
    name: str
    steps: tuple

    def __post_init__(self):
        if not self.steps:
            raise ConfigError("profile needs at least one step")
        object.__setattr__(self, "steps", tuple(self.steps))

    def to_dict(self):
        return {"name": self.name, "steps": [s.to_dict() for s in self.steps]}


def _parse_step(d):
    kind = d.get("op")
    args = {k: v for k, v in d.items() if k != "op"}
    try:
        if kind == "resize":
            return ResizeStep(**args)
        if kind == "sharpen":
            return SharpenStep(**args)
        if kind == "jpeg":
            return JpegStep(**args)
    except TypeError as exc:
        raise ConfigError(f"bad arguments for step {kind!r}: {exc}") from exc
    raise ConfigError(f"unknown profile step {kind!r}")


def profile_from_dict(d, name=None):
    steps = d if isinstance(d, list) else d.get("steps", [])
    pname = name or (d.get("name", "custom") if isinstance(d, dict) else "custom")
    return OsnProfile(pname, tuple(_parse_step(s) for s in steps))


def load_profile(path):
    """Read a profile from a JSON file ({"name", "steps"} or a bare step list)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read profile {path}: {exc}") from exc
    return profile_from_dict(data)


def save_profile(profile, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(profile.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


BUILTIN_PROFILES = {
    "facebook-like": OsnProfile("facebook-like",
                                (ResizeStep(max_side=960), JpegStep(72))),
    "whatsapp-like": OsnProfile("whatsapp-like",
                                (ResizeStep(scale=0.7), SharpenStep(0.5), JpegStep(75))),
    "weibo-like": OsnProfile("weibo-like", (JpegStep(80),)),
    "wechat-like": OsnProfile("wechat-like",
                              (ResizeStep(max_side=1080), JpegStep(70))),
}


def get_profile(name_or_path):
    """Resolve a built-in profile name or a profile JSON path."""
    if name_or_path in BUILTIN_PROFILES:
        return BUILTIN_PROFILES[name_or_path]
    return load_profile(name_or_path)


def degrade(img, profile: OsnProfile):
    """Apply every profile step to an RGB image, in order."""
    out = check_rgb8(img)
    for step in profile.steps:
        if isinstance(step, ResizeStep):
            oh, ow = step.output_dims(*out.shape[:2])
            out = imaging.resize_bilinear(out, oh, ow)
        elif isinstance(step, SharpenStep):
            out = imaging.sharpen(out, step.strength)
        else:
            out = jpeg.jpeg_decode(jpeg.jpeg_encode(out, step.quality))
    return out


def degrade_mask(mask, profile: OsnProfile):
    """Track resize steps on a binary mask with nearest-neighbor sampling."""
    out = mask.copy()
    for step in profile.steps:
        if isinstance(step, ResizeStep):
            oh, ow = step.output_dims(*out.shape[:2])
            out = imaging.resize_nearest(out, oh, ow)
    return out
