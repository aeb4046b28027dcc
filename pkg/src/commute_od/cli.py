"""Command-line entry point: ``commute-od <subcommand> [--config FILE] [--set key=value ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from typing import Optional, Sequence

from .config import load_config
from .errors import ConfigError, DataQualityError
from .pipeline import SUBCOMMANDS, run

HELP = {
    "synth": "generate a synthetic world (pings, tracts, city boundary, ground truth)",
    "extract-stays": "parse pings and extract stay points",
    "infer-places": "detect home and work per device",
    "build-od": "assign tracts and aggregate the OD matrix",
    "validate": "correlate the OD matrix with a reference flow table",
    "route-stats": "route commuters and summarise commute durations",
    "sweep": "rerun stays, places and OD over a threshold grid",
    "all": "run every stage from pings to validation and write a manifest",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="commute-od", description="Commute OD estimation from GPS pings.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", help="shorthand for --set out_dir=PATH")
        p.add_argument("--workers", type=int, help="shorthand for --set workers=N")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    if args.out:
        overrides.append(f"out_dir={args.out}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    try:
        cfg = load_config(args.config, overrides)
        t0 = time.perf_counter()
        result = run(args.command, cfg)
    except (ConfigError, DataQualityError) as exc:
        print(f"commute-od {args.command}: error: {exc}", file=sys.stderr)
        return 2
    logging.getLogger("commute_od").info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
    json.dump(result, sys.stdout, indent=2, sort_keys=True, default=str)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
