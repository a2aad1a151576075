"""SVG chart emitter: determinism and geometry."""

import re

import pytest

from forgenet.chart import PLOT_H, render_chart, write_chart
from forgenet.errors import InputError


def report(model="m1:ckpt", osn=None, auc=1.0, f1=1.0, iou=1.0):
    return {"model": model, "osn_profile": osn,
            "aggregate": {"auc": auc, "f1": f1, "iou": iou,
                          "mean": (auc + f1 + iou) / 3}}


def bar_heights(svg):
    # Bars are the fill-colored rects; grid/background rects differ.
    heights = []
    for m in re.finditer(r'<rect x="[^"]+" y="[^"]+" width="46" '
                         r'height="([0-9.]+)" fill="#(?!ffffff)', svg):
        heights.append(float(m.group(1)))
    return heights


class TestChart:
    def test_perfect_report_bar_spans_full_scale(self):
        svg = render_chart([report()])
        assert sum(bar_heights(svg)) == pytest.approx(PLOT_H, abs=0.1)

    def test_identical_reports_identical_bars(self):
        svg = render_chart([report(), report()])
        hs = bar_heights(svg)
        assert hs[:3] == hs[3:]

    def test_deterministic_bytes(self, tmp_path):
        reports = [report(auc=0.8, f1=0.5, iou=0.4),
                   report(model="m2:ckpt", osn="whatsapp-like",
                          auc=0.7, f1=0.45, iou=0.35)]
        a = tmp_path / "a.svg"
        b = tmp_path / "b.svg"
        write_chart(reports, a)
        write_chart(reports, b)
        assert a.read_bytes() == b.read_bytes()

    def test_segment_heights_proportional(self):
        svg = render_chart([report(auc=0.9, f1=0.6, iou=0.3)])
        hs = bar_heights(svg)
        assert hs[0] == pytest.approx(PLOT_H * 0.9 / 3, abs=0.1)
        assert hs[1] == pytest.approx(PLOT_H * 0.6 / 3, abs=0.1)
        assert hs[2] == pytest.approx(PLOT_H * 0.3 / 3, abs=0.1)

    def test_valid_svg_header(self):
        svg = render_chart([report()])
        assert svg.startswith('<?xml version="1.0"')
        assert 'version="1.1"' in svg
        assert svg.rstrip().endswith("</svg>")

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            render_chart([])

    def test_missing_aggregate_rejected(self, tmp_path):
        bad = tmp_path / "r.json"
        bad.write_text('{"model": "x"}')
        from forgenet.chart import load_report
        with pytest.raises(InputError):
            load_report(bad)

    def test_label_escaping(self):
        svg = render_chart([report(model="a<b&c")])
        assert "a&lt;b&amp;c" in svg
