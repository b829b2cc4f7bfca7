"""Command-line entry point: ``adlearn <command> --config run.json [options]``.

Exit codes: 0 on success, 1 when the configuration or an input file fails
validation, 2 when a command fails while running (model domain errors,
sampler breakdown, unwritable output).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import ConfigError, load_config
from .inference import SamplerFailure
from .model import DomainError

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2

COMMANDS = {
    "simulate-market": (pipeline.cmd_simulate_market, "generate a synthetic market with known parameters"),
    "estimate": (pipeline.cmd_estimate, "fit the learning model and write posterior draws"),
    "counterfactual": (pipeline.cmd_counterfactual, "run paired information scenarios over posterior draws"),
    "pool-ctr": (pipeline.cmd_pool_ctr, "predict unseen CTRs from tag similarity"),
    "analyze": (pipeline.cmd_analyze, "descriptive market statistics"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adlearn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    entries = [("validate", "check input files and report every problem")]
    entries += [(name, help_) for name, (_, help_) in COMMANDS.items()]
    for name, help_ in entries:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", default=None, help="output directory (overrides config and environment)")
        p.add_argument("--threads", type=int, default=None, help="worker processes")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out, threads=args.threads)
        if args.command == "validate":
            issues = pipeline.validate_inputs(cfg)
            for issue in issues:
                print(issue, file=sys.stderr)
            if issues:
                return EXIT_INPUT
            print("inputs ok")
            return EXIT_OK
        written = COMMANDS[args.command][0](cfg)
    except pipeline.InputError as exc:
        for issue in exc.issues:
            print(issue, file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DomainError, SamplerFailure, ArithmeticError, OSError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
