"""Command line entry point.

Subcommands
-----------
run
    One experiment: ``rimfusion run --config exp.toml --out results/``.
sweep
    One run per value of the ``[sweep]`` axis plus a combined ``sweep.csv``.
ingest-check
    Validate an IMU CSV and print a one-line summary.

Exit codes are 0 on success, 1 when an algorithm fails at run time and 2
for configuration or input errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .. import __version__
from ..errors import ConfigError, NonMonotonicTimestamps, ParseError, RuntimeFailure
from .config import load_config
from .io import read_imu_csv
from .runner import run_experiment, run_sweep


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rimfusion", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run one experiment"), ("sweep", "run a parameter sweep")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="TOML config or manifest.json")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
        p.add_argument("--seed-offset", type=int, default=None, help="override the first seed")
        if name == "run":
            p.add_argument("--dump-inputs", action="store_true", help="also write the IMU and range CSVs")
    p = sub.add_parser("ingest-check", help="validate an IMU CSV")
    p.add_argument("path")
    return ap


def _load(args):
    cfg, _ = load_config(args.config)
    if args.seed_offset is not None:
        if args.seed_offset < 0:
            raise ConfigError("--seed-offset must be nonnegative")
        cfg = replace(cfg, seed_offset=args.seed_offset)
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "ingest-check":
            imu = read_imu_csv(args.path)
            span = imu.t[-1] - imu.t[0] if len(imu) else 0.0
            print(f"{args.path}: {len(imu)} samples, {span:.6g} s")
            return 0
        cfg = _load(args)
        if args.command == "run":
            results = run_experiment(cfg, args.out, dump_inputs=args.dump_inputs, workers=args.workers)
            for res in results:
                for alg, m in res.metrics.items():
                    print(f"seed {res.seed} {alg}: rmse_avg {m.rmse_avg:.4g} m")
        else:
            if cfg.sweep_axis is None:
                raise ConfigError("config has no [sweep] table")
            rows = run_sweep(cfg, args.out, workers=args.workers)
            print(f"{len(rows)} sweep rows written to {args.out}")
    except (ConfigError, ParseError, NonMonotonicTimestamps) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeFailure as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
