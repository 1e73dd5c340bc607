"""Command-line entry point.

Subcommands: gen-data, train, predict, prescribe, evaluate, verify, render.
Manifests and reports are JSON; images are binary netpbm (P5/P6).  Exit
codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__, alias_sim, data, fov, masking, models, netpbm, stats
from .errors import DataError, NumericError, ScanscribeError
from .geometry import Box, COLUMNS, ROWS

SEED_ENV = "SCANSCRIBE_SEED"

COLORS = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "cyan": (0, 255, 255),
    "magenta": (255, 0, 255),
    "white": (255, 255, 255),
    "orange": (255, 165, 0),
}


def _parse_box(text: str) -> Box:
    parts = text.split(",")
    if len(parts) != 4:
        raise DataError(f"expected top,bottom,left,right, got {text!r}")
    try:
        return Box(*[float(p) for p in parts])
    except ValueError as exc:
        raise DataError(f"bad box {text!r}: {exc}") from exc


def _default_seed() -> int:
    return int(os.environ.get(SEED_ENV, "0"))


def _meta(args) -> dict:
    config = {
        k: v for k, v in sorted(vars(args).items())
        if k not in ("func", "config") and not callable(v)
    }
    return {"tool": "scanscribe", "version": __version__, "config": config}


def _write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")


def _find_record(records, stack_id):
    for rec in records:
        if rec.stack_id == stack_id:
            return rec
    raise DataError(f"no stack {stack_id!r} in dataset")


def _load_pair(args):
    lr = models.load_weights(args.weights_lr, expect_kind=args.kind)
    tb = models.load_weights(args.weights_tb, expect_kind=args.kind)
    return lr, tb


def cmd_gen_data(args):
    spec = data.PhantomSpec(
        size=args.size, min_slices=args.min_slices, max_slices=args.max_slices,
        noise=args.noise, seed=args.seed)
    records = data.generate_dataset(spec, args.count)
    data.save_dataset(records, args.out, extra={"meta": _meta(args)})
    counts = {s: len(data.split_records(records, s)) for s in data.SPLITS}
    print(f"wrote {len(records)} stacks to {args.out} (splits: {counts})")


def cmd_train(args):
    records = data.load_dataset(args.data)
    config = stats.TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    weights, history = stats.train(args.kind, args.axis, records, config)
    models.save_weights(weights, args.out)
    loss_path = args.out + ".loss.csv"
    with open(loss_path, "w") as f:
        f.write("epoch,train_loss,val_loss\n")
        for row in history:
            f.write(f"{row['epoch']},{row['train_loss']!r},{row['val_loss']!r}\n")
    _write_json(args.out + ".json", {"meta": _meta(args), "history": history})
    print(f"trained {args.kind}/{args.axis}: weights -> {args.out}, losses -> {loss_path}")


def cmd_predict(args):
    records = data.load_dataset(args.data)
    rec = _find_record(records, args.stack)
    weights_lr, weights_tb = _load_pair(args)
    box, diagnostics = models.predict_roi(rec.slices, weights_lr, weights_tb)
    payload = {
        "meta": _meta(args),
        "stack": rec.stack_id,
        "box": list(box.as_tuple()),
        "diagnostics": diagnostics,
    }
    if args.out:
        _write_json(args.out, payload)
    print(json.dumps({"stack": rec.stack_id, "box": list(box.as_tuple())}))


def cmd_prescribe(args):
    records = data.load_dataset(args.data)
    rec = _find_record(records, args.stack)
    roi = rec.label if args.roi_from_label else _parse_box(args.roi)
    policy = masking.ThresholdPolicy(args.mask_threshold_mode, args.mask_threshold)
    report = fov.prescribe_stack(
        rec.slices, roi, policy=policy, phase_encode_axis=rec.phase_encode_axis)
    payload = {
        "meta": _meta(args),
        "stack": rec.stack_id,
        "phase_encode_axis": report.phase_encode_axis,
        "roi": list(report.roi.as_tuple()),
        "fov": list(report.fov.as_tuple()),
        "skipped_slices": list(report.skipped),
        "slices": [
            {
                "index": s.index,
                "mask": list(s.mask.as_tuple()),
                "fov": list(s.fov.as_tuple()),
                "minimal_width": s.minimal_width,
                "alias_free": [s.alias_free.lo, s.alias_free.hi],
                "verdicts": None if s.verdicts is None else {
                    "contains_roi": s.verdicts.contains_roi,
                    "roi_alias_free": s.verdicts.roi_alias_free,
                    "is_minimal": s.verdicts.is_minimal,
                },
            }
            for s in report.slices
        ],
    }
    if args.out:
        _write_json(args.out, payload)
    print(json.dumps({"stack": rec.stack_id, "fov": list(report.fov.as_tuple())}))


def cmd_evaluate(args):
    records = data.split_records(data.load_dataset(args.data), args.split)
    weights_lr, weights_tb = _load_pair(args)
    table = stats.evaluate(weights_lr, weights_tb, records)
    if args.out_csv:
        with open(args.out_csv, "w") as f:
            f.write(table.to_csv())
    payload = {"meta": _meta(args), "metrics": table.summary()}
    if args.compare_csv:
        other = stats.MetricsTable.from_csv(open(args.compare_csv).read())
        for name, mine, theirs in (
            ("iou", table.ious, other.ious),
            ("boundary_error", table.boundary_errors, other.boundary_errors),
        ):
            res = stats.t_test(mine, theirs, variant=args.t_test_variant)
            payload[f"t_test_{name}"] = {"t": res.t, "df": res.df, "p": res.p}
            print(f"t-test {name}: t={res.t:.6f} df={res.df:.6f} p={res.p:.6f}")
    if args.out_summary:
        _write_json(args.out_summary, payload)
    s = table.summary()
    print(
        f"cases={s['cases']} iou={s['iou_mean']:.4f}+/-{s['iou_std']:.4f} "
        f"boundary_error={s['boundary_error_mean']:.4f}+/-{s['boundary_error_std']:.4f}"
    )


def cmd_verify(args):
    verdicts = alias_sim.verify_prescription(
        _parse_box(args.object), _parse_box(args.roi), _parse_box(args.fov),
        phase_encode_axis=args.axis)
    print(json.dumps({
        "contains_roi": verdicts.contains_roi,
        "roi_alias_free": verdicts.roi_alias_free,
        "is_minimal": verdicts.is_minimal,
    }))


def _parse_overlay(text: str):
    try:
        name, rest = text.split("=", 1)
        color, box = rest.split(":", 1)
    except ValueError as exc:
        raise DataError(f"expected name=color:t,b,l,r, got {text!r}") from exc
    if color not in COLORS:
        raise DataError(f"unknown color {color!r}; choose from {sorted(COLORS)}")
    return name, COLORS[color], _parse_box(box)


def _draw_box(rgb: np.ndarray, box: Box, color):
    h, w = rgb.shape[:2]
    top = min(max(int(math.floor(box.top)), 0), h - 1)
    bottom = min(max(int(math.ceil(box.bottom)) - 1, 0), h - 1)
    left = min(max(int(math.floor(box.left)), 0), w - 1)
    right = min(max(int(math.ceil(box.right)) - 1, 0), w - 1)
    rgb[top, left : right + 1] = color
    rgb[bottom, left : right + 1] = color
    rgb[top : bottom + 1, left] = color
    rgb[top : bottom + 1, right] = color


def cmd_render(args):
    records = data.load_dataset(args.data)
    rec = _find_record(records, args.stack)
    overlays = [_parse_overlay(t) for t in (args.boxes or [])]
    written = []
    for k in range(rec.slices.shape[0]):
        rgb = np.repeat(rec.slices[k][:, :, None], 3, axis=2).copy()
        for _, color, box in overlays:
            _draw_box(rgb, box, color)
        path = f"{args.out}_{k}.ppm"
        netpbm.write_ppm(path, rgb)
        written.append(path)
    print(f"wrote {len(written)} PPM files with prefix {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scanscribe",
        description="Localizer-stack ROI prediction and alias-free FOV prescription.")
    parser.add_argument("--config", help="JSON file with default values for flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--min-slices", type=int, default=3)
    p.add_argument("--max-slices", type=int, default=8)
    p.add_argument("--noise", type=float, default=6.0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one boundary-pair instance")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=models.KINDS, default=models.ATTENTION)
    p.add_argument("--axis", choices=(models.AXIS_LR, models.AXIS_TB), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict an ROI box for one stack")
    p.add_argument("--data", required=True)
    p.add_argument("--stack", required=True)
    p.add_argument("--kind", choices=models.KINDS, default=models.ATTENTION)
    p.add_argument("--weights-lr", required=True)
    p.add_argument("--weights-tb", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("prescribe", help="derive the smallest alias-free FOV")
    p.add_argument("--data", required=True)
    p.add_argument("--stack", required=True)
    p.add_argument("--roi", help="ROI as top,bottom,left,right")
    p.add_argument("--roi-from-label", action="store_true")
    p.add_argument("--mask-threshold", type=float, default=0.05)
    p.add_argument("--mask-threshold-mode", choices=(masking.RELATIVE, masking.ABSOLUTE),
                   default=masking.RELATIVE)
    p.add_argument("--out")
    p.set_defaults(func=cmd_prescribe)

    p = sub.add_parser("evaluate", help="box metrics for a split, optional t-tests")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=data.SPLITS, default="test")
    p.add_argument("--kind", choices=models.KINDS, default=models.ATTENTION)
    p.add_argument("--weights-lr", required=True)
    p.add_argument("--weights-tb", required=True)
    p.add_argument("--out-csv")
    p.add_argument("--out-summary")
    p.add_argument("--compare-csv", help="per-case CSV from another evaluate run")
    p.add_argument("--t-test-variant", choices=(stats.POOLED, stats.WELCH),
                   default=stats.POOLED)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify", help="brute-force check of an FOV prescription")
    p.add_argument("--object", required=True)
    p.add_argument("--roi", required=True)
    p.add_argument("--fov", required=True)
    p.add_argument("--axis", choices=(ROWS, COLUMNS), default=ROWS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("render", help="render slices with box overlays as PPM")
    p.add_argument("--data", required=True)
    p.add_argument("--stack", required=True)
    p.add_argument("--boxes", action="append", metavar="NAME=COLOR:T,B,L,R")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config) as f:
                overrides = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: bad config file: {exc}", file=sys.stderr)
            return 2
        for key, value in overrides.items():
            dest = key.replace("-", "_")
            if hasattr(args, dest) and f"--{key}" not in (argv or sys.argv[1:]):
                setattr(args, dest, value)
    if getattr(args, "seed", None) is None and hasattr(args, "seed"):
        args.seed = _default_seed()
    if args.command == "prescribe" and not args.roi_from_label and not args.roi:
        print("error: prescribe needs --roi or --roi-from-label", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except (DataError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ScanscribeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
