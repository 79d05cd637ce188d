"""Command-line entry point: ``gkdv-control --experiment NAME [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .experiments import (
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    calibrate,
    load_calibration,
    load_config_file,
    run_experiment,
)
from .grid import DomainError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gkdv-control", description="Bilinear control of gKdV solitons: desk-scale experiments.")
    ap.add_argument("--experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", type=Path, help="key = value file; flags override it")
    ap.add_argument("--p", type=int)
    ap.add_argument("--cf", type=float, dest="c_f")
    ap.add_argument("--eps", type=float, action="append", help="repeatable; strictly decreasing")
    ap.add_argument("--delta0", type=float)
    ap.add_argument("--gamma0", type=float)
    ap.add_argument("--delta", type=float, help="target H1 size for null control")
    ap.add_argument("--grid-n", type=int, dest="grid_n")
    ap.add_argument("--grid-l", type=float, dest="grid_l")
    ap.add_argument("--dt", type=float)
    ap.add_argument("--t-end", type=float, dest="t_end")
    ap.add_argument("--stride", type=float)
    ap.add_argument("--out", type=str)
    ap.add_argument("--calibrate", action="store_true", help="measure the regression constants and exit")
    ap.add_argument("--calibration-file", type=Path)
    ap.add_argument("--budget-seconds", type=float, dest="budget_seconds")
    return ap


def _config(ns) -> ExperimentConfig:
    values = load_config_file(ns.config) if ns.config else {}
    names = {f.name for f in fields(ExperimentConfig)}
    for k, v in vars(ns).items():
        if k in names and v is not None:
            values[k] = tuple(v) if k == "eps" else v
    if "experiment" not in values:
        raise ConfigError("--experiment is required")
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    out = Path(ns.out or "runs")
    if ns.calibrate:
        calib = calibrate(out)
        print(json.dumps(calib, indent=2, sort_keys=True, default=str))
        return EXIT_OK
    try:
        cfg = _config(ns)
        calib = load_calibration(ns.calibration_file)
        result = run_experiment(cfg, calib)
    except (ConfigError, DomainError) as exc:
        ap.print_usage(sys.stderr)
        print(f"gkdv-control: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    path = result.write(Path(cfg.out))
    for c in result.claims:
        verdict = {True: "PASS", False: "FAIL", None: "SKIP"}[c.passed]
        bound = "-" if c.bound is None else f"{c.bound:.4g}"
        print(f"{verdict:4s} {c.claim_tag:10s} measured={c.measured:.4g} bound={bound}  {c.note}")
    print(f"summary: {path}")
    return EXIT_OK if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
