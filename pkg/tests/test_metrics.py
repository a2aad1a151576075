"""Metric correctness against independent oracles and identities."""

import json

import numpy as np
import pytest

from forgenet import metrics
from forgenet.errors import ShapeError, UsageError
from forgenet.metrics import (DatasetReport, MemorySample, MetricsRecord,
                              binarize, evaluate_dataset, f1, iou, pixel_auc,
                              report_table)


def sweep_auc(scores, gt):
    """Trapezoidal area under the ROC over every distinct threshold."""
    s = np.asarray(scores, np.float64).ravel()
    g = np.asarray(gt).ravel().astype(bool)
    n1 = g.sum()
    n0 = len(g) - n1
    pts = [(0.0, 0.0)]
    for thr in sorted(set(s), reverse=True):
        pred = s >= thr
        tpr = (pred & g).sum() / n1
        fpr = (pred & ~g).sum() / n0
        pts.append((fpr, tpr))
    pts.append((1.0, 1.0))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


class TestPixelAuc:
    def test_perfect_separation(self):
        gt = np.zeros((4, 4), np.uint8)
        gt[:2] = 1
        scores = np.where(gt == 1, 0.9, 0.1).astype(np.float64)
        assert pixel_auc(scores, gt) == 1.0

    def test_all_identical_scores(self):
        gt = np.zeros((4, 4), np.uint8)
        gt[0] = 1
        assert pixel_auc(np.full((4, 4), 0.3), gt) == pytest.approx(0.5)

    def test_single_class_undefined(self):
        assert pixel_auc(np.random.rand(4, 4), np.zeros((4, 4), np.uint8)) is None
        assert pixel_auc(np.random.rand(4, 4), np.ones((4, 4), np.uint8)) is None

    def test_matches_threshold_sweep(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            h = int(rng.integers(4, 33))
            w = int(rng.integers(4, 33))
            gt = (rng.uniform(size=(h, w)) > rng.uniform(0.2, 0.8)).astype(np.uint8)
            if gt.min() == gt.max():
                continue
            scores = rng.uniform(size=(h, w))
            if trial % 3 == 0:  # force ties
                scores = np.round(scores, 1)
            assert pixel_auc(scores, gt) == pytest.approx(sweep_auc(scores, gt),
                                                          abs=1e-9)

    def test_matches_sklearn(self):
        from sklearn.metrics import roc_auc_score
        rng = np.random.default_rng(1)
        gt = (rng.uniform(size=(32, 32)) > 0.6).astype(np.uint8)
        scores = np.round(rng.uniform(size=(32, 32)), 2)
        assert pixel_auc(scores, gt) == pytest.approx(
            roc_auc_score(gt.ravel(), scores.ravel()), abs=1e-12)

    def test_invariant_under_monotone_transforms(self):
        rng = np.random.default_rng(2)
        gt = (rng.uniform(size=(24, 24)) > 0.5).astype(np.uint8)
        s = rng.uniform(size=(24, 24))
        base = pixel_auc(s, gt)
        assert pixel_auc(s ** 3, gt) == pytest.approx(base, abs=1e-12)
        assert pixel_auc(1 / (1 + np.exp(-s)), gt) == pytest.approx(base, abs=1e-12)

    def test_histogram_matches_exact(self):
        rng = np.random.default_rng(3)
        for shape in ((256, 256), (512, 512)):
            gt = (rng.uniform(size=shape) > 0.5).astype(np.uint8)
            scores = rng.uniform(size=shape)
            exact = pixel_auc(scores, gt, method="exact")
            hist = pixel_auc(scores, gt, method="histogram")
            assert hist == pytest.approx(exact, abs=1e-6)

    def test_bad_method(self):
        with pytest.raises(UsageError):
            pixel_auc(np.zeros((2, 2)), np.eye(2, dtype=np.uint8), method="bogus")


class TestF1Iou:
    def test_perfect_match(self):
        m = np.zeros((8, 8), np.uint8)
        m[2:5, 2:5] = 1
        assert f1(m, m) == 1.0
        assert iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((8, 8), np.uint8)
        b = np.zeros((8, 8), np.uint8)
        a[:2] = 1
        b[6:] = 1
        assert f1(a, b) == 0.0
        assert iou(a, b) == 0.0

    def test_half_overlap_counts(self):
        # |pred| = |gt| = 100 with overlap 50: iou = 1/3, f1 = 1/2.
        pred = np.zeros((20, 20), np.uint8)
        gt = np.zeros((20, 20), np.uint8)
        pred.ravel()[:100] = 1
        gt.ravel()[50:150] = 1
        assert iou(pred, gt) == pytest.approx(1 / 3)
        assert f1(pred, gt) == pytest.approx(0.5)

    def test_both_empty_convention(self):
        z = np.zeros((4, 4), np.uint8)
        assert f1(z, z) == 1.0
        assert iou(z, z) == 1.0

    def test_empty_gt_nonempty_pred(self):
        gt = np.zeros((4, 4), np.uint8)
        pred = np.zeros((4, 4), np.uint8)
        pred[0, 0] = 1
        assert f1(pred, gt) == 0.0
        assert iou(pred, gt) == 0.0

    def test_identity_and_ordering_random_pairs(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            pred = (rng.uniform(size=(12, 12)) > rng.uniform(0.2, 0.8)).astype(np.uint8)
            gt = (rng.uniform(size=(12, 12)) > rng.uniform(0.2, 0.8)).astype(np.uint8)
            fv, iv = f1(pred, gt), iou(pred, gt)
            assert abs(fv - 2 * iv / (1 + iv)) <= 1e-12
            assert 0.0 <= iv <= fv <= 1.0
            assert fv == f1(gt, pred) and iv == iou(gt, pred)

    def test_binarize_threshold(self):
        s = np.array([[0.4, 0.5], [0.51, 0.9]], np.float32)
        np.testing.assert_array_equal(binarize(s), [[0, 0], [1, 1]])
        np.testing.assert_array_equal(binarize(s, 0.89), [[0, 0], [0, 1]])


class _ConstantModel:
    """predict() stand-in via a model-shaped object for evaluate_dataset."""

    def __init__(self, masks):
        self.masks = masks  # sample_id -> scores


class TestEvaluateDataset:
    def _dataset(self, rng, n=4, forged=True):
        out = []
        for i in range(n):
            img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
            mask = np.zeros((16, 16), np.uint8)
            if forged:
                mask[4:10, 4:10] = 1
            out.append(MemorySample(f"s{i:02d}", img, mask))
        return out

    def test_perfect_prediction_all_ones(self, monkeypatch):
        rng = np.random.default_rng(5)
        data = self._dataset(rng, n=1)

        def fake_predict(model, img):
            return data[0].mask_array.astype(np.float32)

        monkeypatch.setattr(metrics.model_mod, "predict", fake_predict)
        report = evaluate_dataset([object()], data, dataset_name="toy")
        agg = report.aggregate
        assert agg["auc"] == 1.0 and agg["f1"] == 1.0 and agg["iou"] == 1.0
        assert agg["mean"] == 1.0

    def test_fusion_wins_matches_manual_count(self, monkeypatch):
        rng = np.random.default_rng(6)
        data = self._dataset(rng, n=10)
        scores_a = {s.sample_id: rng.uniform(size=(16, 16)) for s in data}
        scores_b = {s.sample_id: rng.uniform(size=(16, 16)) for s in data}
        models = [_ConstantModel(scores_a), _ConstantModel(scores_b)]
        current = {}

        def fake_predict(model, img):
            return model.masks[current["id"]].astype(np.float32)

        def scoring(models_, record, fusion, osn_profile):
            current["id"] = record.sample_id
            return real_score(models_, record, fusion, osn_profile)

        real_score = metrics._score_one
        monkeypatch.setattr(metrics.model_mod, "predict", fake_predict)
        monkeypatch.setattr(metrics, "_score_one", scoring)
        report = evaluate_dataset(models, data, fusion="max")
        manual = 0
        for s in data:
            gt = s.mask_array
            a = pixel_auc(scores_a[s.sample_id], gt)
            b = pixel_auc(scores_b[s.sample_id], gt)
            fused = pixel_auc(np.maximum(scores_a[s.sample_id],
                                         scores_b[s.sample_id]), gt)
            if fused > max(a, b):
                manual += 1
        assert report.fusion_wins == manual

    def test_missing_mask_listed_in_errors(self):
        from forgenet.errors import InputError

        class Broken:
            sample_id = "bad"

            def image(self):
                return np.zeros((16, 16, 3), np.uint8)

            def mask(self):
                raise InputError("missing mask for bad")

        rng = np.random.default_rng(7)
        good = self._dataset(rng, n=2)
        from forgenet.model import ArchConfig, build_model
        model = build_model(ArchConfig(input_size=16 * 0 + 32,
                                       stage_widths=(4, 8, 16, 32, 64)))
        report = evaluate_dataset([model], good + [Broken()], dataset_name="d")
        assert len(report.per_image) == 2
        assert report.errors == [{"id": "bad", "message": "missing mask for bad"}]

    def test_single_class_image_flagged_and_excluded(self, monkeypatch):
        rng = np.random.default_rng(8)
        forged = self._dataset(rng, n=1)
        pristine = self._dataset(rng, n=1, forged=False)
        pristine[0].sample_id = "s99"

        def fake_predict(model, img):
            return np.zeros((16, 16), np.float32)

        monkeypatch.setattr(metrics.model_mod, "predict", fake_predict)
        report = evaluate_dataset([object()], forged + pristine)
        by_id = {r.sample_id: r for r in report.per_image}
        assert by_id["s99"].auc is None
        assert "auc_undefined" in by_id["s99"].flags
        assert report.aggregate["auc"] == by_id["s00"].auc

    def test_usage_errors(self):
        with pytest.raises(UsageError):
            evaluate_dataset([], [])
        with pytest.raises(UsageError):
            evaluate_dataset([object(), object()], [], fusion="none")
        with pytest.raises(UsageError):
            evaluate_dataset([object()], [], fusion="max")


class TestReportFormats:
    def _report(self):
        recs = [MetricsRecord("a", 0.9, 0.5, 1 / 3, []),
                MetricsRecord("b", None, 1.0, 1.0, ["auc_undefined"])]
        return DatasetReport(dataset="d", model="m", fusion="none",
                             osn_profile=None, per_image=recs, errors=[])

    def test_json_schema(self):
        data = json.loads(self._report().to_json())
        assert set(data) == {"dataset", "model", "fusion", "osn_profile",
                             "per_image", "aggregate", "fusion_wins", "errors"}
        assert data["per_image"][0] == {"id": "a", "auc": 0.9, "f1": 0.5,
                                        "iou": 1 / 3, "flags": []}
        assert data["aggregate"]["auc"] == 0.9  # undefined AUC excluded
        assert data["aggregate"]["f1"] == 0.75

    def test_csv_mirror(self):
        lines = self._report().to_csv().splitlines()
        assert lines[0] == "id,auc,f1,iou,flags"
        assert len(lines) == 3
        assert lines[2].startswith("b,,1.000000,1.000000,auc_undefined")

    def test_table_layout(self):
        text = report_table([self._report()])
        head, row = text.splitlines()
        assert head.split() == ["model", "osn", "fusion", "AUC", "F1", "IoU", "Mean"]
        assert "0.900" in row and "0.750" in row
