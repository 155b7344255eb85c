import argparse

from config.config import get_settings
from src.core.models import VARIANTS
from src.services.model_service import format_gradcheck_table, get_model_service, load_model_config, tiny_config


def register(subparsers) -> None:
    parser = subparsers.add_parser("gradcheck", help="Finite-difference check of every parameter")
    parser.add_argument("--config", help="Model config (key=value file); defaults to a tiny network")
    parser.add_argument("--variant", choices=VARIANTS, action="append",
                        help="Variant to check (repeatable); all four by default")
    parser.add_argument("--frames", type=int, default=16)
    parser.add_argument("--max-entries", type=int, default=None, help="Probe at most this many entries per parameter")
    parser.add_argument("--seed", type=int, default=None)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    service = get_model_service()
    seed = args.seed if args.seed is not None else get_settings().DEFAULT_SEED
    failed = []
    for variant in args.variant or VARIANTS:
        config = load_model_config(args.config, variant=variant) if args.config else tiny_config(variant)
        results = service.gradcheck(config, seed=seed, frames=args.frames, max_entries=args.max_entries)
        print(f"[{variant}]")
        print(format_gradcheck_table(results))
        failed += [f"{variant}:{r.name}" for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 1
    print("all parameter groups passed")
    return 0
