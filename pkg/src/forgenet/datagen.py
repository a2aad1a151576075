"""Synthetic forgery samples with exact ground-truth masks.

Three manipulation kinds are generated: copy-move (a region duplicated
within the image), splice (a region pasted from a donor image), and
removal (a region replaced by smooth interpolation of its boundary).
Base images come from a directory of photos or, by default, from a
procedural generator (multi-octave value noise, a color ramp, and a few
solid shapes) so the pipeline runs hermetically.

Every sample derives its own RNG from ``dataset seed XOR sample index``,
so generation order does not affect content and rebuilds are bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging, jpeg
from .errors import ConfigError, InputError
from .validation import check_rgb8

KINDS = ("copy_move", "splice", "removal")
REGION_ATTEMPTS = 16


@dataclass
class ForgerySpec:
    kind: str = "copy_move"
    area: tuple = (0.01, 0.25)
    transforms: tuple = ("flip", "rotate90", "scale")
    scale_range: tuple = (0.5, 2.0)
    post_jpeg: tuple | None = None  # (quality_lo, quality_hi)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        lo, hi = self.area
        if not 0 < lo <= hi < 1:
            raise ConfigError(f"area bounds must satisfy 0 < min <= max < 1, got {self.area}")
        unknown = set(self.transforms) - {"flip", "rotate90", "scale"}
        if unknown:
            raise ConfigError(f"unknown transforms {sorted(unknown)}")
        if self.post_jpeg is not None:
            qlo, qhi = self.post_jpeg
            if not 1 <= qlo <= qhi <= 100:
                raise ConfigError(f"post_jpeg range must lie in [1, 100], got {self.post_jpeg}")


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Procedural base images


def synth_base(height, width, rng) -> np.ndarray:
    """Procedural RGB base: value-noise octaves, a color ramp, solid shapes."""
    canvas = np.zeros((height, width, 3), np.float64)
    # Smooth noise: coarse uniform grids upscaled bilinearly.
    amp = 1.0
    for cells in (4, 8, 16, 32):
        grid = rng.uniform(0.0, 1.0, size=(cells, cells, 3))
        canvas += amp * imaging.resize_bilinear_float(grid, height, width)
        amp *= 0.55
    canvas /= canvas.max()
    # Directional color ramp.
    theta = rng.uniform(0.0, 2 * np.pi)
    yy, xx = np.mgrid[0:height, 0:width]
    ramp = (np.cos(theta) * xx / max(width - 1, 1)
            + np.sin(theta) * yy / max(height - 1, 1))
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    tint = rng.uniform(0.0, 1.0, size=3)
    canvas = 0.65 * canvas + 0.35 * ramp[:, :, None] * tint
    # A few solid shapes for hard edges.
    for _ in range(int(rng.integers(2, 5))):
        color = rng.uniform(0.0, 1.0, size=3)
        cy, cx = rng.uniform(0.15, 0.85) * height, rng.uniform(0.15, 0.85) * width
        ry = rng.uniform(0.05, 0.2) * height
        rx = rng.uniform(0.05, 0.2) * width
        if rng.uniform() < 0.5:
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            inside = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        canvas[inside] = 0.3 * canvas[inside] + 0.7 * color
    return np.clip(canvas * 255.0, 0, 255).astype(np.uint8)


def synth_ramp_base(height, width, rng) -> np.ndarray:
    """High-contrast vertical color ramp with mild texture.

    Regions moved across the ramp carry a conspicuous brightness mismatch,
    so forgeries on these bases are learnable within a few hundred steps;
    training smoke tests rely on that.
    """
    ramp = (np.arange(height, dtype=np.float64) / max(height - 1, 1))[:, None, None]
    lo = rng.uniform(0.0, 0.2, 3)
    hi = rng.uniform(0.8, 1.0, 3)
    if rng.uniform() < 0.5:
        lo, hi = hi, lo
    img = np.broadcast_to(ramp * hi + (1.0 - ramp) * lo,
                          (height, width, 3)).copy()
    grid = rng.uniform(-1.0, 1.0, (8, 8, 3))
    img += 0.05 * imaging.resize_bilinear_float(grid, height, width)
    return np.clip(img * 255.0, 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Region sampling and transforms


def _convex_poly_support(h, w, rng):
    """Boolean support of a random convex polygon inside an h x w box."""
    k = int(rng.integers(5, 9))
    pts = np.column_stack([rng.uniform(0, h - 1, k), rng.uniform(0, w - 1, k)])
    center = pts.mean(axis=0)
    angles = np.arctan2(pts[:, 0] - center[0], pts[:, 1] - center[1])
    pts = pts[np.argsort(angles)]
    yy, xx = np.mgrid[0:h, 0:w]
    inside = np.ones((h, w), bool)
    for i in range(len(pts)):
        y0, x0 = pts[i]
        y1, x1 = pts[(i + 1) % len(pts)]
        # Half-plane test against edge (p0 -> p1); hull is CCW in (y, x).
        inside &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return inside


def _sample_support(src_h, src_w, area_pixels, spec, rng):
    """One support mask (rh, rw) and its top-left position in the source."""
    lo, hi = spec.area
    frac = rng.uniform(lo, hi)
    aspect = rng.uniform(0.5, 2.0)
    rh = int(round(np.sqrt(frac * area_pixels * aspect)))
    rw = int(round(frac * area_pixels / max(rh, 1)))
    rh, rw = max(rh, 4), max(rw, 4)
    if rh > src_h - 2 or rw > src_w - 2:
        return None
    if rng.uniform() < 0.5:
        support = np.ones((rh, rw), bool)
    else:
        support = _convex_poly_support(rh, rw, rng)
    sy = int(rng.integers(0, src_h - rh + 1))
    sx = int(rng.integers(0, src_w - rw + 1))
    return support, sy, sx


def _transform_patch(patch, support, spec, rng):
    if "flip" in spec.transforms and rng.uniform() < 0.5:
        axis = int(rng.integers(0, 2))
        patch = np.flip(patch, axis=axis)
        support = np.flip(support, axis=axis)
    if "rotate90" in spec.transforms and rng.uniform() < 0.5:
        k = int(rng.integers(1, 4))
        patch = np.rot90(patch, k)
        support = np.rot90(support, k)
    if "scale" in spec.transforms and rng.uniform() < 0.5:
        s = rng.uniform(*spec.scale_range)
        nh = max(4, int(round(patch.shape[0] * s)))
        nw = max(4, int(round(patch.shape[1] * s)))
        patch = imaging.resize_bilinear(np.ascontiguousarray(patch), nh, nw)
        support = imaging.resize_nearest(support.astype(np.uint8), nh, nw).astype(bool)
    return np.ascontiguousarray(patch), np.ascontiguousarray(support)


def _region_from(source, target_hw, spec, rng):
    """Transformed patch+support whose final area fraction meets the spec.

    The fraction is measured against the image being forged (``target_hw``),
    which may differ from the source the patch is cut from.
    """
    th, tw = target_hw
    lo, hi = spec.area
    for _ in range(REGION_ATTEMPTS):
        got = _sample_support(source.shape[0], source.shape[1], th * tw, spec, rng)
        if got is None:
            continue
        support, sy, sx = got
        patch = source[sy : sy + support.shape[0], sx : sx + support.shape[1]]
        patch, support = _transform_patch(patch, support, spec, rng)
        if support.shape[0] > th - 1 or support.shape[1] > tw - 1:
            continue
        if lo <= support.sum() / (th * tw) <= hi:
            return patch, support, (sy, sx)
    raise ConfigError(
        f"could not fit a region with area in {spec.area} into {th}x{tw}")


def _paste(base, patch, support, rng, forbid=None):
    """Paste the supported patch pixels at a random fitting position."""
    h, w = base.shape[:2]
    rh, rw = support.shape
    for _ in range(REGION_ATTEMPTS):
        py = int(rng.integers(0, h - rh + 1))
        px = int(rng.integers(0, w - rw + 1))
        if forbid is not None and (py, px) == forbid:
            continue
        out = base.copy()
        out[py : py + rh, px : px + rw][support] = patch[support]
        mask = np.zeros((h, w), np.uint8)
        mask[py : py + rh, px : px + rw][support] = 1
        return out, mask, (py, px)
    raise ConfigError("could not place the region at a non-identical location")


def _maybe_post_jpeg(sample, spec, rng):
    if spec.post_jpeg is None:
        return sample
    qlo, qhi = spec.post_jpeg
    q = int(rng.integers(qlo, qhi + 1))
    sample.image = jpeg.jpeg_decode(jpeg.jpeg_encode(sample.image, q))
    sample.meta["post_jpeg_quality"] = q
    return sample


def _rng_or_default(spec, rng):
    return np.random.default_rng(np.random.PCG64(spec.seed)) if rng is None else rng


def gen_copy_move(base, spec: ForgerySpec, rng=None) -> Sample:
    """Duplicate a region within the image; the mask marks the pasted pixels."""
    base = check_rgb8(base)
    rng = _rng_or_default(spec, rng)
    patch, support, (sy, sx) = _region_from(base, base.shape[:2], spec, rng)
    img, mask, (py, px) = _paste(base, patch, support, rng, forbid=(sy, sx))
    sample = Sample(img, mask, {"kind": "copy_move", "src": (sy, sx), "dst": (py, px)})
    return _maybe_post_jpeg(sample, spec, rng)


def gen_splice(base, donor, spec: ForgerySpec, rng=None) -> Sample:
    """Paste a transformed donor region into the base image."""
    base = check_rgb8(base)
    donor = check_rgb8(donor)
    rng = _rng_or_default(spec, rng)
    patch, support, (sy, sx) = _region_from(donor, base.shape[:2], spec, rng)
    img, mask, (py, px) = _paste(base, patch, support, rng)
    sample = Sample(img, mask, {"kind": "splice", "src": (sy, sx), "dst": (py, px)})
    return _maybe_post_jpeg(sample, spec, rng)


def gen_removal(base, spec: ForgerySpec, rng=None) -> Sample:
    """Replace a rectangle by boundary interpolation; diffusion-style fill."""
    base = check_rgb8(base)
    rng = _rng_or_default(spec, rng)
    h, w = base.shape[:2]
    lo, hi = spec.area
    for _ in range(REGION_ATTEMPTS):
        frac = rng.uniform(lo, hi)
        aspect = rng.uniform(0.5, 2.0)
        rh = int(round(np.sqrt(frac * h * w * aspect)))
        rw = int(round(frac * h * w / max(rh, 1)))
        rh, rw = max(rh, 4), max(rw, 4)
        if rh > h - 2 or rw > w - 2:
            continue
        y0 = int(rng.integers(1, h - rh))
        x0 = int(rng.integers(1, w - rw))
        img = base.astype(np.float64)
        top = img[y0 - 1, x0 : x0 + rw]
        bottom = img[y0 + rh, x0 : x0 + rw]
        left = img[y0 : y0 + rh, x0 - 1]
        right = img[y0 : y0 + rh, x0 + rw]
        ti = ((np.arange(rh) + 1.0) / (rh + 1.0))[:, None, None]
        tj = ((np.arange(rw) + 1.0) / (rw + 1.0))[None, :, None]
        vert = top[None, :, :] * (1 - ti) + bottom[None, :, :] * ti
        horz = left[:, None, :] * (1 - tj) + right[:, None, :] * tj
        out = base.copy()
        out[y0 : y0 + rh, x0 : x0 + rw] = imaging.round_half_up(
            (vert + horz) / 2.0).astype(np.uint8)
        mask = np.zeros((h, w), np.uint8)
        mask[y0 : y0 + rh, x0 : x0 + rw] = 1
        sample = Sample(out, mask, {"kind": "removal", "dst": (y0, x0)})
        return _maybe_post_jpeg(sample, spec, rng)
    raise ConfigError(
        f"could not fit a removal region with area in {spec.area} into {h}x{w}")


# ---------------------------------------------------------------------------
# Dataset building and loading


def split_of(sample_id, train_fraction=0.9):
    """Stable train/val assignment from the hash of the sample id."""
    digest = hashlib.sha256(sample_id.encode("utf-8")).digest()
    value = int.from_bytes(digest[:8], "big") / 2**64
    return "train" if value < train_fraction else "val"


def _load_bases(path):
    exts = {".png", ".jpg", ".jpeg", ".tif", ".tiff"}
    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in exts)
    if not files:
        raise InputError(f"no base images found in {path}")
    return files


def generate_sample(index, spec, dataset_seed, size, base_files=None) -> Sample:
    """One deterministic sample: RNG seeded by dataset seed XOR index."""
    derived = dataset_seed ^ index
    rng = np.random.default_rng(np.random.PCG64(derived))
    h, w = size
    if base_files:
        base = imaging.load_image(base_files[int(rng.integers(0, len(base_files)))])
        base = imaging.resize_bilinear(base, h, w)
    else:
        base = synth_base(h, w, rng)
    if spec.kind == "copy_move":
        sample = gen_copy_move(base, spec, rng)
    elif spec.kind == "splice":
        if base_files and len(base_files) > 1:
            donor = imaging.load_image(base_files[int(rng.integers(0, len(base_files)))])
            donor = imaging.resize_bilinear(donor, h, w)
        else:
            donor = synth_base(h, w, rng)
        sample = gen_splice(base, donor, spec, rng)
    else:
        sample = gen_removal(base, spec, rng)
    sample.meta["seed"] = derived
    return sample


def build_dataset(out_dir, count, specs, bases=None, size=(256, 256), seed=0,
                  train_fraction=0.9) -> dict:
    """Write images/, masks/, and manifest.json; returns the manifest.

    Sample ``i`` uses ``specs[i % len(specs)]``. Identical seeds reproduce
    every file byte for byte.
    """
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    specs = list(specs)
    if not specs:
        raise ConfigError("need at least one forgery spec")
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create dataset directory {out}: {exc}") from exc
    base_files = _load_bases(bases) if bases else None

    entries = []
    for i in range(count):
        spec = specs[i % len(specs)]
        sample = generate_sample(i, spec, seed, size, base_files)
        sid = f"{i:05d}_{spec.kind}"
        imaging.save_png(out / "images" / f"{sid}.png", sample.image)
        imaging.save_mask_png(out / "masks" / f"{sid}.png", sample.mask)
        entries.append({"id": sid, "kind": spec.kind,
                        "split": split_of(sid, train_fraction),
                        "seed": seed ^ i})
    manifest = {"seed": seed, "count": count,
                "size": [int(size[0]), int(size[1])], "samples": entries}
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


@dataclass
class DiskSample:
    sample_id: str
    kind: str
    split: str
    image_path: Path
    mask_path: Path

    def image(self):
        return imaging.load_image(self.image_path)

    def mask(self):
        if not self.mask_path.exists():
            raise InputError(f"missing mask for {self.sample_id}: {self.mask_path}")
        return imaging.load_mask(self.mask_path)


class DiskDataset:
    """Manifest-backed dataset directory with optional split/kind filters."""

    def __init__(self, root, split=None, kind=None):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        try:
            with open(manifest_path, "r", encoding="utf-8") as fh:
                self.manifest = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read {manifest_path}: {exc}") from exc
        self.samples = []
        for entry in self.manifest["samples"]:
            if split is not None and entry["split"] != split:
                continue
            if kind is not None and entry["kind"] != kind:
                continue
            sid = entry["id"]
            self.samples.append(DiskSample(
                sid, entry["kind"], entry["split"],
                self.root / "images" / f"{sid}.png",
                self.root / "masks" / f"{sid}.png"))

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)

    def pairs(self):
        """Materialize (image, mask) arrays, e.g. for training."""
        return [(s.image(), s.mask()) for s in self.samples]
