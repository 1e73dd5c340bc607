#!/usr/bin/env python3
"""Train all three architectures on a synthetic benchmark and compare them.

Generates a phantom dataset, trains both boundary-pair instances per
architecture, evaluates held-out IoU / boundary error, and runs pairwise
t-tests against the attention model.  Results land in a JSON summary plus
one per-case CSV per architecture.

Example:
    python3 scripts/run_benchmark.py --out results/ --count 500 --epochs 25
"""

import argparse
import json
import os
import time

from scanscribe import data, models, stats


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--count", type=int, default=500)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--epochs", type=int, default=25)
    parser.add_argument("--lr", type=float, default=2e-3)
    parser.add_argument("--data-seed", type=int, default=11)
    parser.add_argument("--train-seed", type=int, default=0)
    parser.add_argument("--kinds", nargs="+", default=list(models.KINDS),
                        choices=models.KINDS)
    args = parser.parse_args()

    os.makedirs(args.out, exist_ok=True)
    spec = data.PhantomSpec(size=args.size, seed=args.data_seed)
    records = data.generate_dataset(spec, args.count)
    test_records = data.split_records(records, "test")
    config = stats.TrainConfig(epochs=args.epochs, lr=args.lr, seed=args.train_seed)

    tables = {}
    summary = {"spec": {"count": args.count, "size": args.size,
                        "data_seed": args.data_seed},
               "train": {"epochs": args.epochs, "lr": args.lr,
                         "seed": args.train_seed},
               "results": {}}
    for kind in args.kinds:
        start = time.time()
        weights = {}
        for axis in (models.AXIS_LR, models.AXIS_TB):
            weights[axis], history = stats.train(kind, axis, records, config)
            models.save_weights(weights[axis],
                                os.path.join(args.out, f"{kind}_{axis}.sswt"))
            print(f"{kind}/{axis}: final val loss "
                  f"{min(h['val_loss'] for h in history):.5f}")
        elapsed = time.time() - start
        table = stats.evaluate(weights[models.AXIS_LR], weights[models.AXIS_TB],
                               test_records)
        tables[kind] = table
        with open(os.path.join(args.out, f"{kind}_metrics.csv"), "w") as f:
            f.write(table.to_csv())
        summary["results"][kind] = {**table.summary(), "train_seconds": elapsed}
        s = table.summary()
        print(f"{kind}: iou={s['iou_mean']:.4f}+/-{s['iou_std']:.4f} "
              f"boundary_error={s['boundary_error_mean']:.3f}px "
              f"({elapsed:.0f}s)")

    if models.ATTENTION in tables:
        for kind, table in tables.items():
            if kind == models.ATTENTION:
                continue
            res = stats.t_test(tables[models.ATTENTION].ious, table.ious)
            summary["results"][kind]["t_vs_attention"] = {
                "t": res.t, "df": res.df, "p": res.p}
            print(f"attention vs {kind} (iou): t={res.t:.3f} p={res.p:.4f}")

    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
        f.write("\n")
    print(f"summary -> {os.path.join(args.out, 'summary.json')}")


if __name__ == "__main__":
    main()
