"""Command-line entry point: ``crosslayer {run,select,sweep,perf}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .core import CrossLayerError
from .harness import (
    COMMANDS,
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_FAILURE,
    EXIT_OK,
    ConfigParseError,
    format_perf,
    load_config,
)
from .mnist import DataError

FAST_TRIALS = 200


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crosslayer", description="Accuracy-aware soft-error resilience experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "run": "evaluate the all-candidate configuration and write report.json",
        "select": "greedy configuration selection, writes selection.json",
        "sweep": "selection over the threshold x error-rate grid, writes sweep.csv",
        "perf": "price BASELINE, HaRE and CL, writes perf.json",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="experiment config file (key = value)")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--trials", type=int, help="Monte Carlo trials (overrides fault.trials)")
        p.add_argument("--seed", type=int, help="master seed (overrides fault.master_seed)")
        p.add_argument("--fast", action="store_true", help=f"use {FAST_TRIALS} trials")
        p.add_argument("-v", "--verbose", action="store_true", help="log selector warnings")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.out:
            from pathlib import Path
            cfg.out_dir = Path(args.out)
        if args.fast:
            cfg.trials = FAST_TRIALS
        if args.trials is not None:
            cfg.trials = args.trials
        if args.seed is not None:
            cfg.master_seed = args.seed
        try:
            cfg.fault_spec, cfg.constraints
        except ValueError as exc:
            raise ConfigParseError(str(exc)) from None
        result = COMMANDS[args.command](cfg)
    except ConfigParseError as exc:
        print(f"crosslayer: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"crosslayer: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CrossLayerError as exc:
        print(f"crosslayer: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if args.command == "perf":
        print(format_perf(result))
    elif args.command == "run":
        print(f"{result['workload']}: accuracy loss {result['accuracy_loss']:.4f} "
              f"(stderr {result['stderr']:.4f}, {result['trials']} trials) -> {cfg.out_dir / 'report.json'}")
    elif args.command == "select":
        print(f"selected {' + '.join(result['final_config']) or '(none)'}; "
              f"demoted {[r for r, _ in result['demotion_sequence']]} -> {cfg.out_dir / 'selection.json'}")
    else:
        print(f"{len(result)} sweep rows -> {cfg.out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
