import argparse
import json

from src.services.model_service import get_model_service


def register(subparsers) -> None:
    parser = subparsers.add_parser("inspect", help="Summarise a checkpoint or a DMSF corpus")
    parser.add_argument("path")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    summary = get_model_service().inspect(args.path)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0
