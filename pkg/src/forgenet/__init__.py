"""Pixel-wise image forgery localization toolkit.

Core pieces: a numpy tensor engine with a reverse-mode gradient tape, two
U-Net variants with scSE recalibration fused by pixelwise max, the training
recipe, pixel-level AUC/F1/IoU metrics, a baseline JPEG codec with
lossy-transmission profiles, a synthetic forgery generator, and a CLI.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ForgenetError, FormatError, InputError,
                     NumericError, ShapeError, UsageError)
from .layers import ScseSpec
from .model import (ArchConfig, Model, build_model, fuse_avg, fuse_max,
                    load_checkpoint, predict, predict_tiled, save_checkpoint)
from .tensor import GradTape, Parameter, Tensor

__all__ = [
    "ArchConfig", "ConfigError", "ForgenetError", "ForgeryLocalizer",
    "FormatError", "GradTape", "InputError", "Model", "NumericError",
    "Parameter", "ScseSpec", "ShapeError", "Tensor", "UsageError",
    "build_model", "fuse_avg", "fuse_max", "load_checkpoint", "predict",
    "predict_tiled", "save_checkpoint",
]


def __getattr__(name):
    # Lazy so that importing the CLI does not pull in scikit-learn.
    if name == "ForgeryLocalizer":
        from .estimator import ForgeryLocalizer
        return ForgeryLocalizer
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
