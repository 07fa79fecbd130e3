"""
Command-line entry point

Each subcommand module registers its parser; dispatch runs through the
command middleware so every failure ends in one diagnostic line and a
distinct exit code.
"""
import sys
from typing import List, Optional

import torch

from featup.cli import bench, synth, train, upsample, viz
from featup.cli.common import ArgumentParser
from featup.core.config import settings
from featup.core.logging import get_logger
from featup.core.middleware import run_command

logger = get_logger(__name__)

COMMANDS = (synth, train, upsample, viz, bench)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="featup",
        description="Model-agnostic feature upsampling: JBU stacks and implicit upsamplers",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def configure_threads() -> None:
    if settings.FEATUP_THREADS:
        torch.set_num_threads(settings.FEATUP_THREADS)


def cli(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    name = next((arg for arg in argv if not arg.startswith("-")), settings.APP_NAME)

    def dispatch() -> int:
        args = parser.parse_args(argv)
        configure_threads()
        logger.debug("command_started", command=args.command, environment=settings.ENVIRONMENT)
        return args.handler(args)

    return run_command(name, dispatch)


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
