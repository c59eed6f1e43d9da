"""Command-line front end.

    soilpinn generate --config cfg.yaml --out runs/
    soilpinn train    --config cfg.yaml --out runs/ [--data runs/]
                      [--jobs N] [--dry-run]
    soilpinn report   --out runs/

Any config value can be overridden with ``--set section.key=value``
(repeatable). Exit codes: 0 success, 1 configuration error (bad file,
bad flags, bad overrides), 2 runtime failure (solver or training error,
missing data, no runs to report).

The CLI is a thin shell over the library: ``generate`` is
``harness.generate``, ``train`` is ``harness.train_runs``, and the report
table is read from the per-run ``report.json`` files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import RUN_NAMES, ConfigError, load_config
from . import harness

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1 (config errors)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser():
    p = _Parser(prog="soilpinn",
                description="Soil-moisture field reconstruction pipeline: "
                            "reference solver, sensor sampling, and "
                            "physics-constrained network training.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data_flag=False):
        sp.add_argument("--config", required=True,
                        help="YAML experiment config (seeds are mandatory)")
        sp.add_argument("--out", required=True,
                        help="output directory")
        sp.add_argument("--set", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", dest="overrides",
                        help="override a config value (repeatable)")
        if data_flag:
            sp.add_argument("--data", default=None,
                            help="directory with generated truth/sensor "
                                 "files (defaults to --out)")

    g = sub.add_parser("generate",
                       help="solve the reference problem and write "
                            "truth_field.bin and sensors.csv")
    common(g)

    t = sub.add_parser("train", help="train the configured optimizer/"
                                     "regime matrix")
    common(t, data_flag=True)
    t.add_argument("--jobs", type=int, default=1,
                   help="train runs in parallel (default 1)")
    t.add_argument("--dry-run", action="store_true",
                   help="validate config and emit log headers, "
                        "train 0 iterations")

    r = sub.add_parser("report", help="consolidate finished runs into a "
                                      "relative-error table")
    r.add_argument("--out", required=True, help="directory holding the runs")
    return p


def _cmd_generate(args):
    cfg = load_config(args.config, args.overrides)
    series, sensors, audit = harness.generate(cfg, args.out)
    print(f"wrote {harness.TRUTH_FILE}: grid "
          f"{cfg.grid.nx}x{cfg.grid.ny}x{cfg.grid.nz}, "
          f"{series.n_save} instants over {series.times[-1]:g} h")
    print(f"wrote {harness.SENSOR_FILE}: {len(sensors)} measurements")
    total_in = float(np.sum(audit["influx"]))
    print("mass balance: total boundary influx "
          f"{total_in:.6e} m^3, max interval relative error "
          f"{float(audit['rel_error'].max()):.3e}, cumulative error "
          f"{float(audit['total_error']):.3e} m^3")
    return 0


def _cmd_train(args):
    cfg = load_config(args.config, args.overrides)
    data_dir = args.data if args.data is not None else args.out
    results = harness.train_runs(cfg, data_dir, args.out, jobs=args.jobs,
                                 dry_run=args.dry_run)
    if args.dry_run:
        print(f"dry run: validated config, wrote headers for "
              f"{len(cfg.training.runs)} run(s) under {args.out}")
        return 0
    for r in results:
        stop = " (plateau stop)" if r.stopped_early else ""
        print(f"{r.name}: {r.iterations_run} iterations{stop}, "
              f"total loss {r.final.total:.6e}, "
              f"re_psi {r.re_psi:.4f}, re_theta {r.re_theta:.4f}")
    return 0


def _cmd_report(args):
    out = Path(args.out)
    found = {}
    for name in RUN_NAMES:
        rp = out / name / "report.json"
        if rp.exists():
            with open(rp) as fh:
                found[name] = json.load(fh)
    if not found:
        print(f"no runs found in {out}", file=sys.stderr)
        return 2
    missing = [n for n in RUN_NAMES if n not in found]
    if missing:
        print("incomplete runs: " + ", ".join(missing), file=sys.stderr)

    cols = [n for n in RUN_NAMES if n in found]
    header = ["metric"] + cols
    rows = []
    for metric in ("re_psi", "re_theta"):
        rows.append([metric] + [f"{found[n][metric]:.4f}" for n in cols])

    widths = [max(len(r[i]) for r in [header] + rows)
              for i in range(len(header))]
    for row in [header] + rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))

    table = out / "report_table.csv"
    with open(table, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    print(f"\nwrote {table}")
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "train":
            return _cmd_train(args)
        return _cmd_report(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
