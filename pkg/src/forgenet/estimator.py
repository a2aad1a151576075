"""Scikit-learn style estimator facade over the forgery localizer.

``ForgeryLocalizer`` follows the sklearn contract: constructor arguments
are stored verbatim, ``fit`` learns state into trailing-underscore
attributes, and ``get_params``/``set_params``/``clone`` work as usual, so
the model composes with sklearn tooling. X is a sequence of (H, W, 3)
uint8 RGB images (sizes may vary), y a sequence of matching (H, W) binary
masks.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import metrics
from . import model as model_mod
from .errors import UsageError
from .layers import ScseSpec
from .model import ArchConfig, build_model
from .training import Hyperparams, train
from .validation import check_binary_mask, check_rgb8


class ForgeryLocalizer(BaseEstimator):
    """Pixel-wise manipulation localizer with a fit/predict interface.

    Defaults are desk-scale so ``fit`` terminates quickly; the documented
    full recipe (batch 32, 1000 steps/epoch, patience 10/35) is available
    by passing those values explicitly.
    """

    def __init__(self, arch="m1", input_size=256,
                 stage_widths=(16, 32, 64, 128, 256), scse_combine="add",
                 scse_reduction=2, lr=1e-4, batch_size=4, steps_per_epoch=50,
                 lr_patience=10, stop_patience=35, max_epochs=10,
                 val_fraction=0.1, threshold=0.5, seed=0):
        self.arch = arch
        self.input_size = input_size
        self.stage_widths = stage_widths
        self.scse_combine = scse_combine
        self.scse_reduction = scse_reduction
        self.lr = lr
        self.batch_size = batch_size
        self.steps_per_epoch = steps_per_epoch
        self.lr_patience = lr_patience
        self.stop_patience = stop_patience
        self.max_epochs = max_epochs
        self.val_fraction = val_fraction
        self.threshold = threshold
        self.seed = seed

    def _validate_data(self, X, y):
        if y is None or len(X) != len(y):
            raise UsageError("fit needs matching image and mask sequences")
        pairs = []
        for img, mask in zip(X, y):
            img = check_rgb8(img)
            mask = check_binary_mask(mask)
            if img.shape[:2] != mask.shape:
                raise UsageError(
                    f"image {img.shape[:2]} and mask {mask.shape} dims differ")
            pairs.append((img, mask))
        return pairs

    def fit(self, X, y):
        pairs = self._validate_data(X, y)
        if len(pairs) < 2:
            raise UsageError("need at least 2 samples to hold out validation data")
        rng = np.random.default_rng(np.random.PCG64(self.seed))
        order = rng.permutation(len(pairs))
        n_val = max(1, int(round(len(pairs) * self.val_fraction)))
        n_val = min(n_val, len(pairs) - 1)
        val = [pairs[i] for i in order[:n_val]]
        tr = [pairs[i] for i in order[n_val:]]
        config = ArchConfig(
            arch=self.arch, input_size=self.input_size,
            stage_widths=tuple(self.stage_widths),
            scse=ScseSpec(reduction=self.scse_reduction, combine=self.scse_combine),
            seed=self.seed)
        model = build_model(config)
        hp = Hyperparams(lr0=self.lr, batch=self.batch_size,
                         steps_per_epoch=self.steps_per_epoch,
                         lr_patience=self.lr_patience,
                         stop_patience=self.stop_patience,
                         max_epochs=self.max_epochs, seed=self.seed)
        result = train(model, tr, val, hp)
        self.model_ = model
        self.result_ = result
        self.history_ = result.history
        self.n_features_in_ = 3
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise UsageError("estimator is not fitted; call fit first")

    def predict_proba(self, X):
        """Per-pixel forgery probabilities, one float mask per input image."""
        self._require_fitted()
        return [model_mod.predict(self.model_, check_rgb8(img)) for img in X]

    def predict(self, X):
        """Binary masks at the configured threshold."""
        return [metrics.binarize(p, self.threshold) for p in self.predict_proba(X)]

    def score(self, X, y):
        """Mean F1 over the given pairs."""
        pairs = self._validate_data(X, y)
        preds = self.predict([img for img, _ in pairs])
        return float(np.mean([metrics.f1(p, m) for p, (_, m) in zip(preds, pairs)]))
