"""Eval accuracy as a function of the patch budget m.

Trains the desk-scale model on the synthetic shape dataset once per
(budget, seed) pair and reports seed-averaged accuracy, reproducing the
monotone accuracy-vs-m trend at desk scale.  The defaults match the
settings used by the trend acceptance test; --quick shrinks everything
for a fast smoke run.

Usage:
    python scripts/trend_sweep.py [--quick] [--out trend.csv]
"""

import argparse
import csv
import sys
import time

from salvit.model import ModelConfig
from salvit.training import (
    SaliencyCache,
    TrainConfig,
    evaluate,
    make_synthetic_dataset,
    train,
)


def parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--budgets", default="16,32,48,64",
                    help="comma-separated m values (of the 64-patch grid)")
    ap.add_argument("--seeds", default="0,1", help="comma-separated training seeds")
    ap.add_argument("--epochs", type=int, default=150)
    ap.add_argument("--base-lr", type=float, default=4e-3)
    ap.add_argument("--train-per-class", type=int, default=100)
    ap.add_argument("--eval-per-class", type=int, default=40)
    ap.add_argument("--out", default="trend.csv", help="per-run results CSV")
    ap.add_argument("--quick", action="store_true",
                    help="tiny sweep (2 budgets, 1 seed, 5 epochs) to check the plumbing")
    args = ap.parse_args(argv)

    budgets = parse_int_list(args.budgets)
    seeds = parse_int_list(args.seeds)
    epochs = args.epochs
    if args.quick:
        budgets, seeds, epochs = [16, 64], [0], 5

    model_cfg = ModelConfig()
    train_ds = make_synthetic_dataset(args.train_per_class, model_cfg.input_size, seed=1000)
    eval_ds = make_synthetic_dataset(args.eval_per_class, model_cfg.input_size, seed=2000)
    cache = SaliencyCache()

    rows = []
    averages = {}
    t_all = time.time()
    for m in budgets:
        accs = []
        for seed in seeds:
            cfg = TrainConfig(epochs=epochs, base_lr=args.base_lr, warmup_steps=20,
                              weight_decay=0.05, clip_norm=1.0, batch_size=16, seed=seed)
            t0 = time.time()
            result = train(model_cfg, cfg, train_ds, m,
                           eval_dataset=eval_ds, cache=cache)
            acc = evaluate(result.params, model_cfg, eval_ds, m, cache=cache)
            elapsed = time.time() - t0
            rows.append({"m": m, "seed": seed, "eval_acc": acc,
                         "best_eval_acc": result.best_eval_acc, "seconds": elapsed})
            accs.append(acc)
            print(f"m={m:3d} seed={seed}: eval {acc:.3f} "
                  f"(best {result.best_eval_acc:.3f}, {elapsed:.0f}s)", flush=True)
        averages[m] = sum(accs) / len(accs)

    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["m", "seed", "eval_acc",
                                                "best_eval_acc", "seconds"])
        writer.writeheader()
        writer.writerows(rows)

    print(f"\ntotal {time.time() - t_all:.0f}s, wrote {args.out}")
    chance = 1.0 / 3.0
    for m in budgets:
        print(f"m={m:3d}: seed-averaged eval acc {averages[m]:.4f} "
              f"({averages[m] / chance:.2f}x chance)")
    lo, hi = budgets[0], budgets[-1]
    verdict = "holds" if averages[hi] >= averages[lo] else "DOES NOT hold"
    print(f"trend acc(m={hi}) >= acc(m={lo}): {verdict}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
