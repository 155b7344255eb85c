import argparse

from config.config import get_settings
from src.services.corpus_service import get_corpus_service


def register(subparsers) -> None:
    parser = subparsers.add_parser("generate", help="Write a seeded synthetic corpus")
    parser.add_argument("--spec", required=True, help="Generator spec (key=value file)")
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--seed", type=int, default=None, help="Override the spec seed")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    service = get_corpus_service()
    spec = service.load_spec(args.spec)
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    elif "seed" not in spec.model_fields_set:
        spec = spec.model_copy(update={"seed": get_settings().DEFAULT_SEED})
    manifest = service.generate(spec, args.out)
    for split, info in manifest["files"].items():
        print(f"{split}: {info['file_name']} {info['utterances']} utterances sha256={info['sha256']}")
    print(f"languages: {', '.join(manifest['languages'])}")
    return 0
