"""Scikit-learn estimator contract: params, clone, fit/predict/score."""

import numpy as np
import pytest
from sklearn.base import clone

from forgenet.datagen import ForgerySpec, gen_copy_move, synth_ramp_base
from forgenet.errors import UsageError
from forgenet.estimator import ForgeryLocalizer


def tiny_data(n=4, size=32, seed=0):
    rng = np.random.default_rng(np.random.PCG64(seed))
    spec = ForgerySpec(kind="copy_move", area=(0.1, 0.25))
    X, y = [], []
    for _ in range(n):
        s = gen_copy_move(synth_ramp_base(size, size, rng), spec, rng)
        X.append(s.image)
        y.append(s.mask)
    return X, y


def tiny_estimator(**kw):
    args = dict(arch="m1", input_size=32, stage_widths=(4, 8, 16, 32, 64),
                batch_size=2, steps_per_epoch=3, max_epochs=1, seed=0)
    args.update(kw)
    return ForgeryLocalizer(**args)


class TestSklearnContract:
    def test_get_set_params(self):
        est = tiny_estimator()
        params = est.get_params()
        assert params["arch"] == "m1"
        assert params["lr"] == 1e-4
        est.set_params(arch="m2", stage_widths=(8, 16, 32, 64, 128))
        assert est.arch == "m2"

    def test_clone(self):
        est = tiny_estimator(seed=3)
        twin = clone(est)
        assert twin.get_params() == est.get_params()
        assert twin is not est

    def test_repr_mentions_changed_params(self):
        assert "input_size=32" in repr(tiny_estimator())


class TestFitPredict:
    def test_fit_sets_state_and_returns_self(self):
        X, y = tiny_data()
        est = tiny_estimator()
        assert est.fit(X, y) is est
        assert hasattr(est, "model_")
        assert len(est.history_) == 1

    def test_predict_shapes_and_types(self):
        X, y = tiny_data()
        est = tiny_estimator().fit(X, y)
        probs = est.predict_proba(X)
        preds = est.predict(X)
        assert len(probs) == len(preds) == len(X)
        for p, b, img in zip(probs, preds, X):
            assert p.shape == img.shape[:2]
            assert p.dtype == np.float32
            assert b.dtype == np.uint8
            assert set(np.unique(b)) <= {0, 1}

    def test_variable_image_sizes(self):
        X, y = tiny_data()
        est = tiny_estimator().fit(X, y)
        rng = np.random.default_rng(1)
        odd = rng.integers(0, 256, (45, 61, 3), dtype=np.uint8)
        assert est.predict_proba([odd])[0].shape == (45, 61)

    def test_score_is_mean_f1(self):
        from forgenet.metrics import f1
        X, y = tiny_data()
        est = tiny_estimator().fit(X, y)
        want = np.mean([f1(p, m) for p, m in zip(est.predict(X), y)])
        assert est.score(X, y) == pytest.approx(want)

    def test_unfitted_predict_rejected(self):
        with pytest.raises(UsageError):
            tiny_estimator().predict_proba([np.zeros((32, 32, 3), np.uint8)])

    def test_mismatched_data_rejected(self):
        X, y = tiny_data()
        with pytest.raises(UsageError):
            tiny_estimator().fit(X, y[:-1])
        with pytest.raises(UsageError):
            tiny_estimator().fit([X[0]], [y[0][:16]])

    def test_deterministic_fit(self):
        X, y = tiny_data()
        a = tiny_estimator(seed=5).fit(X, y)
        b = tiny_estimator(seed=5).fit(X, y)
        for pa, pb in zip(a.model_.parameters(), b.model_.parameters()):
            np.testing.assert_array_equal(pa.value.data, pb.value.data)
