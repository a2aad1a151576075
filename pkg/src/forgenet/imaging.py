"""Image I/O, bilinear/nearest resizing, and the unsharp enhancement filter.

Images are channels-last uint8 arrays: (H, W, 3) for RGB, (H, W) for
grayscale masks. Resizing maps coordinates through half-pixel centers:
src = (dst + 0.5) * in/out - 0.5, clamped to the valid range.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import InputError, ShapeError
from .validation import check_rgb8


def round_half_up(x):
    """Round with .5 going up, elementwise (np.round rounds half to even)."""
    return np.floor(np.asarray(x) + 0.5)


def load_image(path):
    """Decode a PNG/JPEG/TIFF file to (H, W, 3) uint8 RGB."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, SyntaxError, ValueError) as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from exc


def load_mask(path, threshold=127):
    """Decode a grayscale ground-truth mask to binary {0, 1} uint8.

    Benchmark masks are anti-aliased at region edges, so any value above
    ``threshold`` counts as forged.
    """
    try:
        with Image.open(path) as im:
            gray = np.asarray(im.convert("L"), dtype=np.uint8)
    except (OSError, SyntaxError, ValueError) as exc:
        raise InputError(f"cannot decode mask {path}: {exc}") from exc
    return (gray > threshold).astype(np.uint8)


def save_png(path, array):
    """Write uint8 RGB (H, W, 3) or grayscale (H, W) as PNG."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8 or arr.ndim not in (2, 3):
        raise ShapeError(f"expected uint8 (H, W) or (H, W, 3), got {arr.dtype} {arr.shape}")
    Image.fromarray(arr).save(path, format="PNG")


def save_mask_png(path, mask):
    """Write a probability or binary mask as 8-bit grayscale PNG.

    Probabilities map to bytes as value * 255 rounded half-up.
    """
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeError(f"mask must be (H, W), got {arr.shape}")
    if arr.dtype == np.uint8:
        out = np.where(arr > 0, np.uint8(255), np.uint8(0)) if arr.max() <= 1 else arr
    else:
        out = round_half_up(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(out).save(path, format="PNG")


def _axis_weights(n_in, n_out):
    """Source indices and blend weights for one bilinear axis."""
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear_float(img, out_h, out_w):
    """Separable bilinear resize of an array (H, W[, C]), float64 output.

    Rows are gathered before the float conversion so downscaling a large
    8-bit image never materializes it in float64.
    """
    arr = np.asarray(img)
    h, w = arr.shape[:2]
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output dims must be >= 1, got {out_h}x{out_w}")
    if (h, w) == (out_h, out_w):
        return arr.astype(np.float64)
    lo, hi, fr = _axis_weights(h, out_h)
    fr = fr.reshape(-1, *([1] * (arr.ndim - 1)))
    arr = arr[lo].astype(np.float64) * (1.0 - fr) + arr[hi].astype(np.float64) * fr
    lo, hi, fr = _axis_weights(w, out_w)
    fr = fr.reshape(1, -1, *([1] * (arr.ndim - 2)))
    return arr[:, lo] * (1.0 - fr) + arr[:, hi] * fr


def resize_bilinear(img, out_h, out_w):
    """Bilinear resize of a uint8 image; identity sizes return a byte copy."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        raise ShapeError(f"expected uint8 image, got {arr.dtype}")
    if arr.shape[:2] == (out_h, out_w):
        return arr.copy()
    out = resize_bilinear_float(arr, out_h, out_w)
    return round_half_up(out).astype(np.uint8)


def resize_nearest(mask, out_h, out_w):
    """Nearest-neighbor resize; keeps binary masks binary."""
    arr = np.asarray(mask)
    h, w = arr.shape[:2]
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output dims must be >= 1, got {out_h}x{out_w}")
    if (h, w) == (out_h, out_w):
        return arr.copy()
    rows = np.clip(round_half_up((np.arange(out_h) + 0.5) * (h / out_h) - 0.5),
                   0, h - 1).astype(np.int64)
    cols = np.clip(round_half_up((np.arange(out_w) + 0.5) * (w / out_w) - 0.5),
                   0, w - 1).astype(np.int64)
    return arr[rows][:, cols]


_GAUSS3 = np.array([1.0, 2.0, 1.0]) / 4.0


def gaussian3x3(img):
    """Separable 3x3 Gaussian blur with replicated edges, float output."""
    arr = np.asarray(img, dtype=np.float64)
    pad = np.pad(arr, [(1, 1), (0, 0)] + [(0, 0)] * (arr.ndim - 2), mode="edge")
    arr = pad[:-2] * _GAUSS3[0] + pad[1:-1] * _GAUSS3[1] + pad[2:] * _GAUSS3[2]
    pad = np.pad(arr, [(0, 0), (1, 1)] + [(0, 0)] * (arr.ndim - 2), mode="edge")
    return pad[:, :-2] * _GAUSS3[0] + pad[:, 1:-1] * _GAUSS3[1] + pad[:, 2:] * _GAUSS3[2]


def sharpen(img, strength):
    """Unsharp mask: img + strength * (img - blur(img)), clamped to [0, 255]."""
    if strength < 0:
        raise ShapeError(f"strength must be >= 0, got {strength}")
    arr = check_rgb8(img)
    if strength == 0:
        return arr.copy()
    base = arr.astype(np.float64)
    out = base + strength * (base - gaussian3x3(base))
    return round_half_up(np.clip(out, 0.0, 255.0)).astype(np.uint8)


def psnr(a, b, peak=255.0):
    """Peak signal-to-noise ratio in dB between two same-shaped images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"images must match, got {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))
