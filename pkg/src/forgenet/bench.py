"""Timing harness: pre-scaled prediction versus native-resolution tiling.

Pre-scaling runs one fixed-size forward pass regardless of the input, so
its cost is flat in the image size once decode and resize are excluded.
Tiling runs one forward pass per window, so it grows with the pixel count.
The report separates resize time from forward time to make that visible.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from . import datagen, imaging
from . import model as model_mod
from .tensor import Tensor


@dataclass
class TimingRow:
    strategy: str
    size: int
    total_s: float
    forward_s: float
    passes: int


@dataclass
class TimingReport:
    model: str
    rows: list

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "size", "total_s", "forward_s", "passes"])
        for r in self.rows:
            w.writerow([r.strategy, r.size, f"{r.total_s:.4f}",
                        f"{r.forward_s:.4f}", r.passes])
        return buf.getvalue()

    def to_text(self):
        sizes = sorted({r.size for r in self.rows})
        by = {(r.strategy, r.size): r for r in self.rows}
        lines = [f"{'input':>10s} {'pixels':>12s} {'prescale_s':>11s} "
                 f"{'prescale_fwd_s':>15s} {'tile_s':>9s}"]
        for s in sizes:
            pre = by.get(("prescale", s))
            til = by.get(("tile", s))
            lines.append(
                f"{f'{s}x{s}':>10s} {s * s:>12d} "
                f"{(f'{pre.total_s:.3f}' if pre else '-'):>11s} "
                f"{(f'{pre.forward_s:.3f}' if pre else '-'):>15s} "
                f"{(f'{til.total_s:.3f}' if til else '-'):>9s}")
        return "\n".join(lines) + "\n"


def synth_square(size, seed=0):
    """Timing image of the requested size: a tiled 256-px procedural patch."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    patch = datagen.synth_base(min(size, 256), min(size, 256), rng)
    reps = -(-size // patch.shape[0])
    return np.ascontiguousarray(np.tile(patch, (reps, reps, 1))[:size, :size])


def bench_predict(model, sizes, strategies=("prescale", "tile"), seed=0,
                  tile=256, overlap=0, repeats=3, model_id="model") -> TimingReport:
    """Synthesize square images and time each (strategy, size) pair.

    Wall time uses the monotonic clock. Pre-scale forward passes are timed
    interleaved across sizes and reported as the median of ``repeats``
    (after a warmup), which holds up under noisy shared-CPU scheduling;
    total_s includes the resize, forward_s excludes it.
    """
    sizes = list(sizes)
    s = model.config.input_size
    images = {size: synth_square(size, seed ^ size) for size in sizes}
    rows = []
    if "prescale" in strategies:
        small = {}
        resize_s = {}
        for size in sizes:
            t0 = time.perf_counter()
            small[size] = (imaging.resize_bilinear_float(images[size], s, s)
                           .astype(np.float32) / 255.0)
            resize_s[size] = time.perf_counter() - t0
        model.forward(Tensor(small[sizes[0]][None]), mode="infer")  # warmup
        laps = {size: [] for size in sizes}
        for rep in range(repeats):
            # Snake order cancels any residual within-round drift.
            for size in (sizes if rep % 2 == 0 else reversed(sizes)):
                t0 = time.perf_counter()
                model.forward(Tensor(small[size][None]), mode="infer")
                laps[size].append(time.perf_counter() - t0)
        for size in sizes:
            fwd = float(np.median(laps[size]))
            rows.append(TimingRow("prescale", size, resize_s[size] + fwd, fwd, 1))
    if "tile" in strategies:
        for size in sizes:
            stride = tile - overlap
            per_axis = max(1, -(-max(size - tile, 0) // stride) + 1)
            t0 = time.perf_counter()
            model_mod.predict_tiled(model, images[size], tile=tile,
                                    overlap=overlap)
            elapsed = time.perf_counter() - t0
            rows.append(TimingRow("tile", size, elapsed, elapsed, per_axis ** 2))
    return TimingReport(model=model_id, rows=rows)
