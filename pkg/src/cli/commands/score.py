import argparse
import os

from config.config import get_settings
from src.services.evaluation_service import get_evaluation_service, write_score_table
from src.utils.file_utils import ensure_directory_exists


def register(subparsers) -> None:
    parser = subparsers.add_parser("score", help="Write softmax scores of every utterance as CSV")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--data", required=True, help="DMSF file to score")
    parser.add_argument("--out", required=True, help="Score table CSV")
    parser.add_argument("--threads", type=int, default=None, help="Scoring threads")
    parser.add_argument("--mean-norm-window", type=int, default=None,
                        help="Sliding normalisation window in frames (default: as trained)")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    threads = args.threads or get_settings().SCORING_THREADS
    table = get_evaluation_service(threads).score_files(args.checkpoint, args.data, args.mean_norm_window)
    ensure_directory_exists(os.path.dirname(args.out))
    write_score_table(table, args.out)
    print(f"scored {len(table.truth)} utterances -> {args.out}")
    return 0
