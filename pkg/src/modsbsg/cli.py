"""Command-line entry point: ``modsbsg train|test|compare|sweep``.

Failures exit with status 2 and print ``{"error": code, "message": ...}`` on stderr.
"""
import argparse
import json
import sys
from pathlib import Path

from . import harness
from .errors import ModSbSGError


def _load(args):
    cfg = harness.load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = args.out
    return harness.with_overrides(cfg, **changes) if changes else cfg


def _summary(art):
    return {"phase": art.phase, "out_dir": str(art.out_dir), "metrics": art.report["metrics"]}


def cmd_train(args):
    cfg = _load(args)
    art = harness.run_experiment(cfg, harness.TRAIN)
    out = [_summary(art)]
    if args.with_test:
        out.append(_summary(harness.run_experiment(cfg, harness.TEST, checkpoint=art.checkpoint)))
    return out


def cmd_test(args):
    cfg = _load(args)
    return [_summary(harness.run_experiment(cfg, harness.TEST, checkpoint=args.checkpoint))]


def cmd_compare(args):
    rows = harness.compare_report(args.run_a, args.run_b)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        harness.write_comparison_csv(rows, args.out)
    return rows


def cmd_sweep(args):
    cfg = _load(args)
    values = json.loads(args.values) if args.values else None
    _, summary = harness.sweep(cfg, args.axis, values)
    return summary


def build_parser():
    p = argparse.ArgumentParser(prog="modsbsg", description="Leader/follower learning on plant simulators")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="experiment config JSON")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--out", default=None, help="override the output directory")

    t = sub.add_parser("train", help="train policies and write a checkpoint")
    common(t)
    t.add_argument("--with-test", action="store_true", help="run the test phase afterwards")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("test", help="evaluate frozen policies")
    common(s)
    s.add_argument("--checkpoint", required=True, help="checkpoint directory from a train run")
    s.set_defaults(func=cmd_test)

    c = sub.add_parser("compare", help="percentage deltas between two runs")
    c.add_argument("run_a", help="baseline run directory or report file")
    c.add_argument("run_b", help="candidate run directory or report file")
    c.add_argument("--out", default=None, help="write the comparison as CSV")
    c.add_argument("--seed", type=int, default=None, help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", help="one train+test run per axis value")
    common(w)
    w.add_argument("--axis", required=True, choices=harness.SWEEP_AXES)
    w.add_argument("--values", default=None, help="JSON list of axis values (default: config sweep section)")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except ModSbSGError as exc:
        payload = {"error": exc.code, "message": str(exc)}
        if getattr(exc, "path", None):
            payload["path"] = exc.path
        print(json.dumps(payload), file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
