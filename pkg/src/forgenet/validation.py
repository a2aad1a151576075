"""Input validation helpers for images, masks, and score maps."""

import numpy as np

from .errors import ShapeError


def check_rgb8(img, name="image"):
    """Validate and return an (H, W, 3) uint8 RGB image."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must be at least 1x1, got {arr.shape}")
    if arr.dtype != np.uint8:
        raise ShapeError(f"{name} must be uint8, got {arr.dtype}")
    return arr


def check_binary_mask(mask, name="mask"):
    """Validate and return an (H, W) uint8 mask with values in {0, 1}."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must have shape (H, W), got {arr.shape}")
    if arr.dtype != np.uint8:
        arr = arr.astype(np.uint8)
    bad = (arr != 0) & (arr != 1)
    if bad.any():
        raise ShapeError(f"{name} must be binary (0/1), found other values")
    return arr


def check_prob_mask(scores, name="scores"):
    """Validate and return an (H, W) float array with values in [0, 1]."""
    arr = np.asarray(scores, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must have shape (H, W), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ShapeError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ShapeError(f"{name} values must lie in [0, 1]")
    return arr


def check_same_shape(a, b, name_a="first", name_b="second"):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(
            f"{name_a} and {name_b} must match, got {a.shape} vs {b.shape}"
        )
    return a, b
