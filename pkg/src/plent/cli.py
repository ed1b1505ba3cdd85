"""Command-line interface.

Verbs: ``run``, ``sweep``, ``emit-plots``, ``validate``. Exit codes:
0 success, 1 config/validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from . import config as config_mod
from . import harness


def _err(msg):
    print(msg, file=sys.stderr)


def cmd_validate(args):
    try:
        cfg = config_mod.load_config(args.config)
    except config_mod.ConfigError as e:
        for line in e.errors:
            _err(f"{args.config}: {line}")
        return 1
    except (OSError, yaml.YAMLError) as e:
        _err(f"{args.config}: {e}")
        return 1
    print(f"{args.config}: ok (run id {config_mod.run_id(cfg)})")
    return 0


def cmd_run(args):
    try:
        cfg = config_mod.load_config(args.config)
    except config_mod.ConfigError as e:
        for line in e.errors:
            _err(f"{args.config}: {line}")
        return 1
    except (OSError, yaml.YAMLError) as e:
        _err(f"{args.config}: {e}")
        return 1
    try:
        report = harness.execute_run(cfg, args.out, data_root=args.data_root)
    except Exception as e:
        _err(f"run failed: {e}")
        return 2
    print(
        f"run {report.run_id}: best_acc={report.best_acc:.4f} "
        f"(epoch {report.best_epoch}), final_acc={report.final_acc:.4f}"
    )
    print(f"artifacts in {Path(args.out) / report.run_id}")
    return 0


def cmd_sweep(args):
    try:
        with open(args.grid, encoding="utf-8") as f:
            grid_raw = yaml.safe_load(f)
        cells = harness.expand_grid(grid_raw)
    except config_mod.ConfigError as e:
        for line in e.errors:
            _err(f"{args.grid}: {line}")
        return 1
    except (OSError, yaml.YAMLError) as e:
        _err(f"{args.grid}: {e}")
        return 1
    try:
        rows = harness.run_sweep(grid_raw, args.out, data_root=args.data_root)
    except Exception as e:
        _err(f"sweep failed: {e}")
        return 2
    failed = sum(1 for r in rows if r["status"] != "ok")
    print(f"sweep finished: {len(rows) - failed}/{len(cells)} cells ok, summary in {args.out}/summary.csv")
    return 0


def cmd_emit_plots(args):
    try:
        n = harness.emit_plot_data(args.run_dirs, args.out, log=_err)
    except ValueError as e:
        _err(str(e))
        return 2
    print(f"emitted plot data for {n} run(s) into {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="plent",
        description="Train networks with weight-subset entropic smoothing and inspect layer signals.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one run config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default="runs")
    p_run.add_argument("--data-root", default=None)
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="execute an experiment grid")
    p_sweep.add_argument("grid")
    p_sweep.add_argument("--out", default="runs")
    p_sweep.add_argument("--data-root", default=None)
    p_sweep.set_defaults(fn=cmd_sweep)

    p_emit = sub.add_parser("emit-plots", help="write tidy plot CSVs from run directories")
    p_emit.add_argument("run_dirs", nargs="+")
    p_emit.add_argument("--out", default="plots")
    p_emit.set_defaults(fn=cmd_emit_plots)

    p_val = sub.add_parser("validate", help="check a run config")
    p_val.add_argument("config")
    p_val.set_defaults(fn=cmd_validate)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
