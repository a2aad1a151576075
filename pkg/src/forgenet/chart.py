"""Deterministic SVG chart: stacked AUC+F1+IoU bars per evaluation report.

Each bar accumulates the three aggregate metrics of one (model, profile)
report, so the bar height reads as the metric sum in [0, 3]. Output bytes
depend only on the input reports, which keeps charts diffable.
"""

from __future__ import annotations

import json

from .errors import InputError

SEGMENT_COLORS = (("auc", "#4878a8"), ("f1", "#e49444"), ("iou", "#6a9f58"))

BAR_W = 46
BAR_GAP = 26
PLOT_H = 300
MARGIN_L = 52
MARGIN_T = 24
MARGIN_B = 72
MAX_TOTAL = 3.0


def _fmt(v):
    return f"{v:.2f}".rstrip("0").rstrip(".")


def load_report(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read report {path}: {exc}") from exc
    if "aggregate" not in data:
        raise InputError(f"report {path} has no aggregate block")
    return data


def render_chart(reports) -> str:
    """SVG 1.1 text for a list of report dicts (see metrics.DatasetReport)."""
    if not reports:
        raise InputError("need at least one report")
    n = len(reports)
    width = MARGIN_L + n * (BAR_W + BAR_GAP) + BAR_GAP
    height = MARGIN_T + PLOT_H + MARGIN_B
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    # y axis with quarter-unit grid
    for k in range(7):
        val = k * 0.5
        y = MARGIN_T + PLOT_H - PLOT_H * val / MAX_TOTAL
        lines.append(f'<line x1="{MARGIN_L}" y1="{_fmt(y)}" '
                     f'x2="{width - BAR_GAP}" y2="{_fmt(y)}" '
                     f'stroke="#dddddd" stroke-width="1"/>')
        lines.append(f'<text x="{MARGIN_L - 6}" y="{_fmt(y + 4)}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{_fmt(val)}</text>')
    for i, rep in enumerate(reports):
        agg = rep["aggregate"]
        x = MARGIN_L + BAR_GAP + i * (BAR_W + BAR_GAP)
        base = MARGIN_T + PLOT_H
        for key, color in SEGMENT_COLORS:
            val = agg.get(key) or 0.0
            seg = PLOT_H * val / MAX_TOTAL
            base -= seg
            lines.append(f'<rect x="{x}" y="{_fmt(base)}" width="{BAR_W}" '
                         f'height="{_fmt(seg)}" fill="{color}"/>')
        label = f"{rep.get('model', '?')}@{rep.get('osn_profile') or 'none'}"
        cx = x + BAR_W / 2
        ty = MARGIN_T + PLOT_H + 12
        lines.append(f'<text x="{_fmt(cx)}" y="{ty}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10" '
                     f'transform="rotate(-35 {_fmt(cx)} {ty})">{_escape(label)}</text>')
    # legend
    lx = MARGIN_L
    ly = height - 16
    for key, color in SEGMENT_COLORS:
        lines.append(f'<rect x="{lx}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
        lines.append(f'<text x="{lx + 14}" y="{ly}" font-family="sans-serif" '
                     f'font-size="11">{key.upper()}</text>')
        lx += 70
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _escape(text):
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def write_chart(reports, path):
    svg = render_chart(reports)
    with open(path, "wb") as fh:
        fh.write(svg.encode("utf-8"))
