"""Command-line interface: run, summarize, validate."""

from __future__ import annotations

import argparse
import dataclasses
import glob
import os
import sys

from .config import ConfigError, load_config
from .harness import format_summary, run_experiment, summarize


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asyncfl",
        description="Asynchronous federated learning simulator with periodic "
                    "aggregation, plus the synchronous FedAvg baseline.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment grid from a config file")
    run.add_argument("config", help="path to the experiment config file")
    run.add_argument("--seed", type=int, action="append", default=None,
                     help="override the config seed list (repeatable)")
    run.add_argument("--out", default=None, help="override the output directory")
    run.add_argument("--parallel", type=int, default=1, metavar="N",
                     help="run up to N cells concurrently")

    summ = sub.add_parser("summarize", help="summarize a directory of result CSVs")
    summ.add_argument("dir", help="directory containing cell CSVs")

    val = sub.add_parser("validate", help="parse and validate a config file")
    val.add_argument("config", help="path to the experiment config file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            paths = run_experiment(cfg, out_dir=args.out, seeds=args.seed,
                                   parallel=args.parallel)
            print(f"wrote {len(paths)} CSV files to "
                  f"{os.path.dirname(paths[0]) if paths else args.out}")
        elif args.command == "summarize":
            paths = [p for p in glob.glob(os.path.join(args.dir, "*.csv"))]
            print(format_summary(summarize(paths)))
        elif args.command == "validate":
            cfg = load_config(args.config)
            print(f"{args.config}: OK")
            for fld in dataclasses.fields(cfg):
                print(f"  {fld.name} = {getattr(cfg, fld.name)}")
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
