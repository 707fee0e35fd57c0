"""Command-line interface: ``fednasmri <gen-data|search|train|eval|report|all>``."""

import argparse
import sys

from . import pipeline
from .config import load_config
from .errors import ValidationError

COMMANDS = ("gen-data", "search", "train", "eval", "report", "all")


def build_parser():
    parser = argparse.ArgumentParser(prog="fednasmri", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "gen-data": "simulate client and held-out datasets",
        "search": "federated architecture search, writes arch.json",
        "train": "fairness-adjusted federated training of an architecture",
        "eval": "score a checkpoint under each scenario",
        "report": "aggregate metrics into summary tables",
        "all": "gen-data, search, train, eval and report in sequence",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="JSON run configuration (defaults if omitted)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        if name in ("train", "eval"):
            p.add_argument("--arch", help="architecture JSON written by search")
        if name == "eval":
            p.add_argument("--scenario", help="comma-separated scenario names")
            p.add_argument("--checkpoint", help="model container (default: <out>/model.gamr)")
    return parser


def _dispatch(args):
    cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
    if args.command == "gen-data":
        for path in pipeline.gen_data(cfg):
            print(path)
    elif args.command == "search":
        result = pipeline.run_search(cfg)
        print("arch:", ", ".join(k.name for k in result.arch.chosen))
    elif args.command == "train":
        if not args.arch:
            raise ValidationError("train needs --arch <path> (written by the search command)")
        pipeline.run_train(cfg, pipeline.read_arch(args.arch))
    elif args.command == "eval":
        arch = pipeline.read_arch(args.arch) if args.arch else None
        scenarios = [s.strip() for s in args.scenario.split(",") if s.strip()] if args.scenario else None
        records = pipeline.run_eval(cfg, args.checkpoint, scenarios, arch)
        print(f"{len(records)} records written to {cfg.out_dir}")
    elif args.command == "report":
        print(pipeline.format_summary(pipeline.run_report(cfg)))
    elif args.command == "all":
        print(pipeline.format_summary(pipeline.run_all(cfg)))


def run_command(argv=None):
    """Run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        _dispatch(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
