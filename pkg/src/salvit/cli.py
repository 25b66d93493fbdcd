"""Command-line entry point.

Subcommands: saliency, select, train, eval, bench, describe, make-dataset.
Machine-readable results go to files in the output directory; diagnostics
go to standard error.  Every file-writing run also drops a config.json
snapshot of the fully resolved configuration, which is sufficient to
reproduce the run.

Exit codes: 0 success; 1 for user errors (bad flags, unreadable or
malformed inputs, impossible parameter combinations, diverging training);
2 for internal errors.
"""

import argparse
import dataclasses
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import checkpoint as ckpt_mod
from . import config as config_mod
from . import patching, saliency, signal, training
from .errors import (
    DivergenceError,
    DivisionDegeneracyError,
    FormatError,
    ParameterError,
    ShapeError,
)
from .model import full_scale_config

USER_ERRORS = (
    ParameterError,
    ShapeError,
    FormatError,
    DivisionDegeneracyError,
    DivergenceError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    PermissionError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--override", action="append", default=[],
                        metavar="KEY=VALUE", help="dotted config override, repeatable")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, help="seed override")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded, bit-reproducible mode")
    common.add_argument("--threads", type=int, help="thread-pool size cap")

    parser = _Parser(prog="salvit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("saliency", parents=[common], help="write a saliency map PNG + sidecar")
    p.add_argument("--input", required=True, help="input PNG")

    p = sub.add_parser("select", parents=[common], help="write a top-m patch selection JSON")
    p.add_argument("--input", required=True, help="input PNG")
    p.add_argument("--m", type=int, help="patches to keep (default: from config selection)")
    p.add_argument("--patch-size", type=int, help="patch side in pixels (default: from config model)")
    p.add_argument("--overlay", action="store_true", help="also write an overlay PNG")

    p = sub.add_parser("train", parents=[common], help="train a model, write checkpoint + metrics")
    p.add_argument("--data", help="dataset directory (class subdirs of PNGs)")
    p.add_argument("--eval-data", help="held-out dataset directory")
    p.add_argument("--num-per-class", type=int, default=64,
                   help="synthetic train images per class when --data is omitted")
    p.add_argument("--eval-num-per-class", type=int, default=16,
                   help="synthetic eval images per class when --eval-data is omitted")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint, write eval.json")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset directory (default: synthetic)")
    p.add_argument("--num-per-class", type=int, default=16)

    p = sub.add_parser("bench", parents=[common], help="write analytic cost reports")
    p.add_argument("--s", default="49,98,147,196", help="comma-separated sequence lengths")
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--base", action="store_true",
                   help="use the full-scale reference model config")
    p.add_argument("--runtime", action="store_true",
                   help="also measure wall-clock on the configured model")
    p.add_argument("--runtime-batch", type=int, default=16)

    p = sub.add_parser("describe", parents=[common], help="print a checkpoint header")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("make-dataset", parents=[common], help="write a synthetic dataset tree")
    p.add_argument("--num-per-class", type=int, required=True)
    p.add_argument("--image-size", type=int, default=32)
    return parser


def _resolve_config(args) -> config_mod.PipelineConfig:
    cfg = config_mod.load_config(args.config) if args.config else config_mod.default_config()
    cfg = config_mod.apply_overrides(cfg, args.override)
    if args.seed is not None:
        cfg = config_mod.apply_overrides(cfg, [f"train.seed={args.seed}"])
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(cfg, out: Path) -> None:
    config_mod.save_config(cfg, out / "config.json")


def _load_input_image(path):
    img = signal.load_image(path)
    return img, signal.to_luminance(img)


def _cmd_saliency(args, cfg) -> int:
    out = _out_dir(args)
    _snapshot(cfg, out)
    img, lum = _load_input_image(args.input)
    smap = saliency.saliency_map(lum, cfg.rog, cfg.curvature)
    values = smap.values
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = np.round((values - lo) / (hi - lo) * 65535.0)
    else:
        scaled = np.zeros_like(values)
    stem = Path(args.input).stem
    signal.write_gray16_png(out / f"{stem}.saliency.png", scaled.astype(np.uint16))
    sidecar = {
        "rog": dataclasses.asdict(cfg.rog),
        "curvature": dataclasses.asdict(cfg.curvature),
        "min": lo,
        "max": hi,
        "levels": 65535,
        "note": "raw = png16 / levels * (max - min) + min",
    }
    with open(out / f"{stem}.saliency.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out / (stem + '.saliency.png')}", file=sys.stderr)
    return 0


def _cmd_select(args, cfg) -> int:
    out = _out_dir(args)
    _snapshot(cfg, out)
    img, lum = _load_input_image(args.input)
    p = args.patch_size or cfg.model.patch_size
    smap = saliency.saliency_map(lum, cfg.rog, cfg.curvature)
    scores = patching.patch_scores(smap.values, p)
    total = scores.size
    m = args.m if args.m is not None else cfg.selection.resolve_m(total)
    sel = patching.select_top_m(scores, m, p, order=cfg.selection.order)
    stem = Path(args.input).stem
    doc = {
        "patch_size": p,
        "m": m,
        "grid_rows": sel.grid_rows,
        "grid_cols": sel.grid_cols,
        "entries": [
            {"index": e.index, "row": e.row, "col": e.col, "score": e.score}
            for e in sel.entries
        ],
    }
    with open(out / f"{stem}.selection.json", "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    if args.overlay:
        overlay = img * 0.3
        for e in sel.entries:
            r, c = e.row * p, e.col * p
            overlay[r : r + p, c : c + p, :] = img[r : r + p, c : c + p, :]
        signal.write_rgb8_png(out / f"{stem}.overlay.png", overlay)
    print(f"selected {m} of {total} patches", file=sys.stderr)
    return 0


def _dataset_for(args, cfg, train_side: bool):
    if train_side and args.data:
        return training.load_dataset_folder(args.data)
    if not train_side and getattr(args, "eval_data", None):
        return training.load_dataset_folder(args.eval_data)
    seed = cfg.train.seed if train_side else cfg.train.seed + 1
    n = args.num_per_class if train_side else args.eval_num_per_class
    return training.make_synthetic_dataset(n, cfg.model.input_size, seed=seed)


def _cmd_train(args, cfg) -> int:
    out = _out_dir(args)
    _snapshot(cfg, out)
    ds = _dataset_for(args, cfg, train_side=True)
    eval_ds = _dataset_for(args, cfg, train_side=False)
    total = cfg.model.grid_side**2
    m = cfg.selection.resolve_m(total)
    cache = training.SaliencyCache(cache_dir=out / "saliency_cache")
    result = training.train(
        cfg.model, cfg.train, ds, m, eval_dataset=eval_ds,
        rog=cfg.rog, curv=cfg.curvature, order=cfg.selection.order, cache=cache,
    )
    ckpt_mod.save_checkpoint(
        out / "checkpoint.bin", result.best_params, cfg.model,
        seed=cfg.train.seed, step=len(result.metrics.step_rows),
        extra={"best_eval_acc": result.best_eval_acc, "m": m},
    )
    result.metrics.write_steps(out / "metrics.csv")
    result.metrics.write_epochs(out / "epochs.csv")
    print(
        f"trained {cfg.train.epochs} epochs, m={m}, "
        f"best eval acc {result.best_eval_acc:.4f}",
        file=sys.stderr,
    )
    return 0


def _cmd_eval(args, cfg) -> int:
    out = _out_dir(args)
    _snapshot(cfg, out)
    params, model_cfg, header = ckpt_mod.load_checkpoint(args.checkpoint)
    if args.data:
        ds = training.load_dataset_folder(args.data)
    else:
        ds = training.make_synthetic_dataset(
            args.num_per_class, model_cfg.input_size, seed=cfg.train.seed + 1
        )
    m = cfg.selection.resolve_m(model_cfg.grid_side**2)
    acc = training.evaluate(
        params, model_cfg, ds, m,
        rog=cfg.rog, curv=cfg.curvature, order=cfg.selection.order,
    )
    doc = {"accuracy": acc, "m": m, "num_examples": len(ds), "checkpoint_step": header["step"]}
    with open(out / "eval.json", "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(f"top-1 accuracy {acc:.4f} on {len(ds)} examples (m={m})", file=sys.stderr)
    return 0


def _cmd_bench(args, cfg) -> int:
    out = _out_dir(args)
    _snapshot(cfg, out)
    model_cfg = full_scale_config() if args.base else cfg.model
    try:
        s_values = [int(x) for x in args.s.split(",") if x.strip()]
    except ValueError as exc:
        raise ParameterError(f"--s must be comma-separated integers, got {args.s!r}") from exc
    if not s_values:
        raise ParameterError("--s lists no sequence lengths")
    reports = []
    for s in s_values:
        entry = {
            "s": s,
            "flops": bench_mod.flops_estimate(model_cfg, s, batch=1).as_dict(),
            "memory": bench_mod.memory_estimate(model_cfg, s, batch=args.batch).as_dict(),
        }
        if args.runtime:
            entry["runtime"] = bench_mod.measure_runtime(
                model_cfg, s, batch=args.runtime_batch, seed=cfg.train.seed,
                threads=args.threads,
            ).as_dict()
        reports.append(entry)
    with open(out / "bench.json", "w") as fh:
        json.dump(reports, fh, indent=2)
        fh.write("\n")
    with open(out / "bench.csv", "w") as fh:
        fh.write("s,flops,memory_bytes,forward_median_ms\n")
        for entry in reports:
            rt = entry.get("runtime", {}).get("forward_median_ms", "")
            fh.write(f"{entry['s']},{entry['flops']['total']},{entry['memory']['total']},{rt}\n")
    print(f"benchmarked s={s_values}", file=sys.stderr)
    return 0


def _cmd_describe(args, cfg) -> int:
    text = ckpt_mod.describe(args.checkpoint)
    if args.out:
        out = _out_dir(args)
        _snapshot(cfg, out)
        with open(out / "header.json", "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {out / 'header.json'}", file=sys.stderr)
    else:
        print(text)
    return 0


def _cmd_make_dataset(args, cfg) -> int:
    out = _out_dir(args)
    _snapshot(cfg, out)
    ds = training.make_synthetic_dataset(
        args.num_per_class, args.image_size, seed=cfg.train.seed
    )
    training.save_dataset_folder(ds, out)
    print(f"wrote {len(ds)} images under {out}", file=sys.stderr)
    return 0


_COMMANDS = {
    "saliency": _cmd_saliency,
    "select": _cmd_select,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "describe": _cmd_describe,
    "make-dataset": _cmd_make_dataset,
}


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        cfg = _resolve_config(args)
        limit = 1 if args.deterministic else args.threads
        if limit is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=limit):
                return _COMMANDS[args.command](args, cfg)
        return _COMMANDS[args.command](args, cfg)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
