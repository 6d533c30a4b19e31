"""Command-line entry point for the open-set recognition pipeline."""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from src.commands.cli_commands import COMMANDS
from src.config.config import apply_overrides, load_config
from src.errors import InvalidArgumentError, OpenSetError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class CommandLineParser(argparse.ArgumentParser):
    """Usage errors raise InvalidArgumentError and exit 1 like any other user error."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise InvalidArgumentError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    """
    Create the argument parser.

    Every subcommand takes the shared experiment flags; evaluate and
    generate add their own.
    """
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="key = value config file")
    shared.add_argument("--out", help="experiment directory (overrides out_dir)")
    shared.add_argument("--seed", type=int, help="global seed (overrides seed)")
    shared.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field; repeatable")
    shared.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = CommandLineParser(prog="osr",
                              description="Open-set recognition with distillation and a synthetic unknown recommender")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("train-teacher", parents=[shared], help="draw the split and pretrain the teacher")
    commands.add_parser("train", parents=[shared], help="augment the teacher and run alternating training")
    commands.add_parser("calibrate", parents=[shared], help="write per-class thresholds")

    evaluate = commands.add_parser("evaluate", parents=[shared], help="AUROC and macro-F1 report")
    evaluate.add_argument("--strategy", choices=["score", "classwise"])
    evaluate.add_argument("--unknown", help="dataset whose test images serve as unknowns")
    evaluate.add_argument("--delta", type=float, help="unknown-score threshold for the score strategy")

    commands.add_parser("ablate", parents=[shared], help="T/TS/RS/TRS baselines on one split")
    commands.add_parser("sweep", parents=[shared], help="macro-F1 against openness")
    commands.add_parser("grid", parents=[shared], help="tau x alpha sensitivity grid")

    generate = commands.add_parser("generate", parents=[shared], help="sample grid from the generator")
    generate.add_argument("--per-class", type=int, help="samples per synthetic unknown class")
    generate.add_argument("--output", help="image path (default: <out>/grids/generated.png)")
    return parser


def resolve_config(args: argparse.Namespace):
    """
    Defaults < config file < --set overrides < --out/--seed.

    Without --config, a config.txt already in the --out directory is used.
    """
    path = args.config
    if path is None and args.out and (Path(args.out) / "config.txt").is_file():
        path = Path(args.out) / "config.txt"
    config = load_config(path, args.overrides)
    flags = []
    if args.out:
        flags.append(f"out_dir={args.out}")
    if args.seed is not None:
        flags.append(f"seed={args.seed}")
    return apply_overrides(config, flags)


def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and map errors to exit codes."""
    try:
        args = build_parser().parse_args(argv)
    except InvalidArgumentError as e:
        logger.error("%s", e)
        return e.exit_code
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT, force=True)

    try:
        config = resolve_config(args)
        handler = COMMANDS[args.command]
        if args.command == "evaluate":
            result = handler(config, strategy=args.strategy, unknown_dataset=args.unknown, delta=args.delta)
        elif args.command == "generate":
            result = handler(config, per_class=args.per_class, output=args.output)
        else:
            result = handler(config)
    except OpenSetError as e:
        logger.error("%s: %s", args.command, e)
        return e.exit_code

    print(json.dumps(result, indent=2, default=str))
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
