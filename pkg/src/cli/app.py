import argparse

from src.cli.commands import count_params, evaluate, generate, gradcheck, inspect_artifact, score, train

COMMANDS = (generate, train, score, evaluate, count_params, gradcheck, inspect_artifact)


def create_app() -> argparse.ArgumentParser:
    """Create the command-line parser with every subcommand registered"""
    parser = argparse.ArgumentParser(
        prog="dmsc",
        description="Dynamic multi-scale convolution for dialect identification",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    for command in COMMANDS:
        command.register(subparsers)
    return parser
