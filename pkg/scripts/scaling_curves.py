"""Cost curves against sequence length: analytic estimates plus wall-clock.

Prints per-s FLOP and activation-memory breakdowns for the full-scale
reference model, the affine fit of memory against s, and the cost of the
shortest sequence relative to the longest.  With --runtime it also times
desk-scale forward passes to show the measured speedup of processing
fewer patches.

Usage:
    python scripts/scaling_curves.py [--runtime] [--out scaling.csv]
"""

import argparse
import csv
import sys

from salvit import bench
from salvit.model import ModelConfig, full_scale_config


def parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--s", default="49,98,147,196", help="comma-separated sequence lengths")
    ap.add_argument("--batch", type=int, default=256, help="batch size for memory estimates")
    ap.add_argument("--runtime", action="store_true",
                    help="also measure desk-scale forward wall-clock")
    ap.add_argument("--runtime-batch", type=int, default=16)
    ap.add_argument("--out", default="scaling.csv")
    args = ap.parse_args(argv)

    s_values = parse_int_list(args.s)
    cfg = full_scale_config()

    rows = []
    print(f"model: embed {cfg.embed_dim}, depth {cfg.depth}, heads {cfg.num_heads}, "
          f"batch {args.batch}")
    print(f"{'s':>5} {'GFLOPs':>10} {'mem GiB':>10} {'attn share':>11}")
    for s in s_values:
        fl = bench.flops_estimate(cfg, s, batch=1)
        mem = bench.memory_estimate(cfg, s, batch=args.batch)
        attn_share = mem.stages["attention_probs"] / mem.total
        print(f"{s:>5} {fl.total / 1e9:>10.2f} {mem.total / 2**30:>10.2f} "
              f"{attn_share:>10.1%}")
        rows.append({"s": s, "flops": fl.total, "memory_bytes": mem.total,
                     "forward_median_ms": ""})

    mems = [row["memory_bytes"] for row in rows]
    flops = [row["flops"] for row in rows]
    r2 = bench.affine_fit_r2(s_values, mems)
    print(f"\nmemory affine fit over s: R^2 = {r2:.6f}")
    print(f"memory ratio s={s_values[0]} / s={s_values[-1]}: {mems[0] / mems[-1]:.4f}")
    print(f"FLOP   ratio s={s_values[0]} / s={s_values[-1]}: {flops[0] / flops[-1]:.4f}")

    if args.runtime:
        desk = ModelConfig()
        total = desk.grid_side**2
        print(f"\ndesk-scale forward wall-clock (batch {args.runtime_batch}):")
        medians = []
        for m in (total // 4, total):
            rt = bench.measure_runtime(desk, m, batch=args.runtime_batch)
            medians.append(rt.forward_median_ms)
            print(f"  s={m:3d}: {rt.forward_median_ms:.2f} ms")
        print(f"  measured ratio s={total // 4} / s={total}: "
              f"{medians[0] / medians[1]:.3f}")

    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["s", "flops", "memory_bytes",
                                                "forward_median_ms"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"\nwrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
