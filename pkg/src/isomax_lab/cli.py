"""Command-line entry point: ``isomax-lab {train,eval,sweep,report}``."""

import argparse
import csv
import logging
import sys
from pathlib import Path

from isomax_lab import experiment as exp
from isomax_lab.errors import IsoMaxLabError, ValidationError


def _scales(text):
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad scale list {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("scales must be positive numbers")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isomax-lab", description="Train, evaluate and compare IsoMax and SoftMax heads for OOD detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch statistics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model from a config file")
    p.add_argument("--config", required=True, type=Path)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the config's test/OOD data")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--score", choices=exp.SCORE_NAMES, default="entropic")

    p = sub.add_parser("sweep", help="IsoMax runs over entropic scales plus a SoftMax baseline")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--scales", type=_scales, default=[1.0, 3.0, 10.0])

    p = sub.add_parser("report", help="aggregate run records into metrics.csv / curves.csv")
    p.add_argument("--runs", required=True, type=Path)
    return parser


def _cmd_train(args):
    config = exp.load_config(args.config)
    record, _ = exp.train(config)
    out = exp.run_dir(config)
    print(f"{record.run_id}: test_accuracy={record.test_accuracy:.4f} "
          f"mean_entropy={record.mean_entropy:.4f} -> {out}")
    for m in record.metrics:
        r = m.report
        print(f"  {m.score:8s} {m.out_data:12s} tnr@tpr95={r.tnr_at_tpr95:.4f} "
              f"auroc={r.auroc:.4f} dtacc={r.dtacc:.4f}")


def _cmd_eval(args):
    config = exp.load_config(args.config)
    model = exp.load_checkpoint(args.checkpoint)
    data = exp.build_data(config)
    result = exp.evaluate(model, data.test, data.ood_sets, args.score)
    scale = getattr(model.head, "entropic_scale", None)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(exp.METRICS_COLUMNS)
    for name, r in result.reports.items():
        writer.writerow([exp._fmt(v) for v in (
            config.run_id, model.head.kind, scale, args.score, data.test.name, name,
            result.test_accuracy, result.mean_entropy, r.tnr_at_tpr95, r.auroc, r.dtacc,
        )])


def _cmd_sweep(args):
    config = exp.load_config(args.config)
    records = exp.sweep(config, args.scales)
    print(f"{len(records)} runs -> {Path(config.output_dir) / 'metrics.csv'}")


def _cmd_report(args):
    records = exp.load_records(args.runs)
    if not records:
        raise ValidationError(f"no */record.json found under {args.runs}")
    metrics, curves = exp.write_report(records, args.runs)
    print(f"{len(records)} records -> {metrics}, {curves}")


COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (IsoMaxLabError, OSError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"isomax-lab {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
