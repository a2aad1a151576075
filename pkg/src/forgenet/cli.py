"""Command-line surface: generate, train, predict, evaluate, degrade, bench, chart.

Every command funnels its randomness through one seeded generator, exits 0
on success, and on failure prints a single machine-readable JSON error line
to stderr before exiting nonzero. Artifacts (checkpoints, masks, reports,
charts) are byte-stable for a fixed seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import bench as bench_mod
from . import chart as chart_mod
from . import datagen, imaging, metrics, osn, training
from . import model as model_mod
from .errors import ConfigError, ForgenetError, InputError, UsageError
from .layers import ScseSpec
from .model import ArchConfig


def _default_threads():
    env = os.environ.get("FORGENET_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"FORGENET_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _threads(args):
    if getattr(args, "deterministic", False):
        return 1
    return args.threads if args.threads else _default_threads()


def _parse_int_list(text, flag):
    try:
        return [int(tok) for tok in text.split(",") if tok]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}")


def _parse_float_pair(text, flag):
    parts = text.split(",")
    if len(parts) != 2:
        raise UsageError(f"{flag} expects two comma-separated numbers, got {text!r}")
    return float(parts[0]), float(parts[1])


def _model_id(path, model):
    return f"{model.config.arch}:{Path(path).stem}"


# ---------------------------------------------------------------------------
# Commands


def cmd_generate(args):
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    area = _parse_float_pair(args.area, "--area")
    post = None
    if args.post_jpeg:
        lo, hi = _parse_float_pair(args.post_jpeg, "--post-jpeg")
        post = (int(lo), int(hi))
    specs = [datagen.ForgerySpec(kind=k, area=area, post_jpeg=post) for k in kinds]
    manifest = datagen.build_dataset(
        args.out, args.count, specs, bases=args.bases,
        size=(args.size, args.size), seed=args.seed,
        train_fraction=args.train_fraction)
    n_train = sum(1 for s in manifest["samples"] if s["split"] == "train")
    print(f"wrote {manifest['count']} samples to {args.out} "
          f"({n_train} train / {manifest['count'] - n_train} val)")
    return 0


def _load_pairs(dataset, what):
    if len(dataset) == 0:
        raise UsageError(f"{what} is empty; generate more samples or check "
                         "--refine-kind filters")
    return dataset.pairs()


def cmd_train(args):
    if args.stage == "refine":
        if not args.init_checkpoint:
            raise UsageError("--stage refine requires --init-checkpoint")
        # The checkpoint dictates the architecture during refinement.
        model = model_mod.load_checkpoint(args.init_checkpoint)
    else:
        config = ArchConfig(
            arch=args.arch, input_size=args.input_size,
            stage_widths=tuple(_parse_int_list(args.widths, "--widths")),
            scse=ScseSpec(reduction=args.scse_reduction,
                          combine=args.scse_combine),
            seed=args.seed)
        model = model_mod.build_model(config)
    kind = args.refine_kind if args.stage == "refine" else None
    train_set = _load_pairs(
        datagen.DiskDataset(args.data, split="train", kind=kind), "train split")
    val_set = _load_pairs(
        datagen.DiskDataset(args.data, split="val", kind=kind), "val split")
    hp = training.Hyperparams(
        lr0=args.lr, batch=args.batch, steps_per_epoch=args.steps_per_epoch,
        lr_patience=args.lr_patience, stop_patience=args.stop_patience,
        max_epochs=args.max_epochs, seed=args.seed)
    result = training.train(
        model, train_set, val_set, hp, stage=args.stage,
        log=lambda rec: print(f"epoch {rec.epoch}: train {rec.train_loss:.4f} "
                              f"val {rec.val_loss:.4f} lr {rec.lr:.2e}"))
    model_mod.save_checkpoint(model, args.out)
    history_path = args.history or f"{args.out}.history.csv"
    with open(history_path, "w", encoding="utf-8") as fh:
        fh.write(training.history_to_csv(result.history))
    print(f"saved checkpoint {args.out} (best epoch {result.best_epoch}, "
          f"val loss {result.best_val_loss:.4f}, stopped: {result.stopped})")
    return 0


def _load_models(args):
    models = [model_mod.load_checkpoint(args.model)]
    ids = [_model_id(args.model, models[0])]
    if getattr(args, "model2", None):
        models.append(model_mod.load_checkpoint(args.model2))
        ids.append(_model_id(args.model2, models[1]))
        if args.fuse == "none":
            raise UsageError("--model2 requires --fuse max or avg")
    return models, ids


def cmd_predict(args):
    models, ids = _load_models(args)
    img = imaging.load_image(args.input)
    probs = [model_mod.predict(m, img) for m in models]
    if len(probs) == 2:
        fuse = model_mod.fuse_max if args.fuse == "max" else model_mod.fuse_avg
        mask = fuse(probs[0], probs[1])
    else:
        mask = probs[0]
    imaging.save_mask_png(args.out, mask)
    print(f"wrote probability mask {args.out} ({'+'.join(ids)})")
    return 0


def cmd_evaluate(args):
    models, ids = _load_models(args)
    fusion = args.fuse if len(models) == 2 else "none"
    profile = osn.get_profile(args.osn) if args.osn else None
    split = None if args.split == "all" else args.split
    dataset = datagen.DiskDataset(args.data, split=split)
    if len(dataset) == 0:
        raise UsageError("dataset selection is empty")
    report = metrics.evaluate_dataset(
        models, dataset, fusion=fusion, osn_profile=profile,
        dataset_name=Path(args.data).name,
        model_id="+".join(ids) + (f"|fuse_{fusion}" if fusion != "none" else ""),
        threads=_threads(args))
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
    sys.stdout.write(metrics.report_table([report]))
    if report.fusion_wins is not None:
        print(f"fused AUC beats both sub-models on {report.fusion_wins} "
              f"of {len(report.per_image)} images")
    if report.errors:
        print(f"{len(report.errors)} images skipped with errors")
    return 0


def cmd_degrade(args):
    profile = osn.get_profile(args.profile)
    dataset = datagen.DiskDataset(args.in_dir)
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    def work(sample):
        img = osn.degrade(sample.image(), profile)
        mask = osn.degrade_mask(sample.mask(), profile)
        imaging.save_png(out / "images" / f"{sample.sample_id}.png", img)
        imaging.save_mask_png(out / "masks" / f"{sample.sample_id}.png", mask)

    threads = _threads(args)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, dataset))
    else:
        for sample in dataset:
            work(sample)
    manifest = dict(dataset.manifest)
    manifest["degraded_with"] = profile.to_dict()
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"degraded {len(dataset)} samples with profile {profile.name} into {out}")
    return 0


def cmd_bench(args):
    model = model_mod.load_checkpoint(args.model)
    strategies = ("prescale", "tile") if args.strategy == "both" else (args.strategy,)
    sizes = _parse_int_list(args.sizes, "--sizes")
    report = bench_mod.bench_predict(
        model, sizes, strategies=strategies, seed=args.seed, tile=args.tile,
        overlap=args.overlap, repeats=args.repeats,
        model_id=_model_id(args.model, model))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
    sys.stdout.write(report.to_text())
    return 0


def cmd_chart(args):
    reports = [chart_mod.load_report(p) for p in args.reports]
    chart_mod.write_chart(reports, args.out)
    print(f"wrote {args.out} ({len(reports)} bars)")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_common(sp):
    sp.add_argument("--seed", type=int, default=0, help="run seed")
    sp.add_argument("--deterministic", action="store_true",
                    help="force single-threaded, bit-stable execution")
    sp.add_argument("--threads", type=int, default=0,
                    help="worker threads (default: FORGENET_THREADS or CPU count)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="forgenet",
        description="Pixel-wise image forgery localization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("generate", help="build a synthetic forgery dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--kinds", default="copy_move,splice,removal")
    sp.add_argument("--size", type=int, default=256)
    sp.add_argument("--bases", default=None, help="directory of base photos")
    sp.add_argument("--area", default="0.01,0.25")
    sp.add_argument("--post-jpeg", dest="post_jpeg", default=None,
                    help="quality range LO,HI for whole-image recompression")
    sp.add_argument("--train-fraction", dest="train_fraction", type=float, default=0.9)
    _add_common(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("train", help="train a model on a generated dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--arch", choices=("m1", "m2"), default="m1")
    sp.add_argument("--widths", default="16,32,64,128,256")
    sp.add_argument("--input-size", dest="input_size", type=int, default=256)
    sp.add_argument("--scse-combine", dest="scse_combine",
                    choices=("add", "max"), default="add")
    sp.add_argument("--scse-reduction", dest="scse_reduction", type=int, default=2)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int, default=1000)
    sp.add_argument("--lr-patience", dest="lr_patience", type=int, default=10)
    sp.add_argument("--stop-patience", dest="stop_patience", type=int, default=35)
    sp.add_argument("--max-epochs", dest="max_epochs", type=int, default=1000)
    sp.add_argument("--stage", choices=("initial", "refine"), default="initial")
    sp.add_argument("--refine-kind", dest="refine_kind",
                    choices=datagen.KINDS, default=None,
                    help="restrict the refine stage to one forgery kind")
    sp.add_argument("--init-checkpoint", dest="init_checkpoint", default=None)
    sp.add_argument("--history", default=None, help="history CSV path")
    _add_common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="predict a probability mask for one image")
    sp.add_argument("--model", required=True)
    sp.add_argument("--model2", default=None)
    sp.add_argument("--fuse", choices=("none", "max", "avg"), default="none")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    _add_common(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("evaluate", help="run metrics over a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--model2", default=None)
    sp.add_argument("--fuse", choices=("none", "max", "avg"), default="none")
    sp.add_argument("--osn", default=None,
                    help="built-in profile name or profile JSON path")
    sp.add_argument("--split", choices=("all", "train", "val"), default="all")
    sp.add_argument("--report", required=True, help="output report JSON path")
    sp.add_argument("--csv", default=None, help="optional per-image CSV path")
    _add_common(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("degrade", help="write a lossy-transmitted dataset copy")
    sp.add_argument("--profile", required=True)
    sp.add_argument("--in", dest="in_dir", required=True)
    sp.add_argument("--out", required=True)
    _add_common(sp)
    sp.set_defaults(func=cmd_degrade)

    sp = sub.add_parser("bench", help="time prescale vs tile prediction")
    sp.add_argument("--model", required=True)
    sp.add_argument("--strategy", choices=("prescale", "tile", "both"),
                    default="both")
    sp.add_argument("--sizes", default="512,1024,2048,4096")
    sp.add_argument("--tile", type=int, default=256)
    sp.add_argument("--overlap", type=int, default=0)
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--out", default=None, help="timing CSV path")
    _add_common(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("chart", help="stacked metric bars as SVG")
    sp.add_argument("--reports", nargs="+", required=True)
    sp.add_argument("--out", required=True)
    _add_common(sp)
    sp.set_defaults(func=cmd_chart)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ForgenetError, OSError) as exc:
        sys.stderr.write(json.dumps(
            {"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
