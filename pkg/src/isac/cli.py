"""Command-line entry point.

    isac run <experiment> [--config FILE.json] [--out DIR]
                          [--seed N] [--workers N]

Runs one of the named experiments and writes its CSVs, figures and manifest
under the output directory. Exit code 0 on success; 2 when any solver
stopped on its iteration budget (outputs are still written so the run can be
inspected).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import EXPERIMENTS, run_experiment

__all__ = ["build_parser", "main"]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="isac",
        description="Pilot-free multi-user OFDM sensing experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a named experiment")
    run.add_argument("experiment", choices=sorted(EXPERIMENTS),
                     help="which experiment to run")
    run.add_argument("--config", type=Path, default=None, metavar="FILE",
                     help="JSON file with overrides merged into defaults")
    run.add_argument("--out", type=Path, default=None, metavar="DIR",
                     help="output directory (default ./isac-out/<name>)")
    run.add_argument("--seed", type=int, default=0, metavar="N",
                     help="base seed; per-trial seeds are derived from it")
    run.add_argument("--workers", type=int, default=1, metavar="N",
                     help="process count for trial-level parallelism")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.seed < 0 or args.seed >= 2 ** 64:
        print("error: --seed must fit in an unsigned 64-bit integer",
              file=sys.stderr)
        return 1
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 1

    cfg = {}
    if args.config is not None:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config {args.config}: {exc}",
                  file=sys.stderr)
            return 1
        if not isinstance(cfg, dict):
            print("error: config file must contain a JSON object",
                  file=sys.stderr)
            return 1

    out_dir = args.out or Path("isac-out") / args.experiment
    result = run_experiment(args.experiment, cfg, out_dir, args.seed,
                            args.workers)
    for fname in result.outputs:
        print(f"wrote {Path(out_dir) / fname}")
    if not result.ok:
        print("warning: a solver stopped on its iteration budget; "
              "results written but unconverged", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
