import argparse
import os

from config.config import get_settings
from src.core.errors import ConfigError
from src.services.evaluation_service import (
    format_report,
    get_evaluation_service,
    read_score_table,
    write_det_points,
    write_report,
    write_score_table,
)
from src.utils.config_utils import split_list
from src.utils.file_utils import ensure_directory_exists


def register(subparsers) -> None:
    parser = subparsers.add_parser("evaluate", help="Compute Cavg and EER on held-out data")
    parser.add_argument("--checkpoint", help="Checkpoint to score --data with")
    parser.add_argument("--data", help="DMSF file with held-out utterances")
    parser.add_argument("--scores", help="Existing score table CSV instead of --checkpoint/--data")
    parser.add_argument("--out-scores", help="Write the score table CSV here")
    parser.add_argument("--report", help="Write the metric report as JSON here")
    parser.add_argument("--det-out", help="Write DET operating points (threshold,p_fa,p_miss) here")
    parser.add_argument("--languages", help="Comma separated language subset; scores are renormalised over it")
    parser.add_argument("--threads", type=int, default=None, help="Scoring threads")
    parser.add_argument("--mean-norm-window", type=int, default=None,
                        help="Sliding normalisation window in frames (default: as trained)")
    parser.set_defaults(handler=run)


def _output(path: str) -> str:
    ensure_directory_exists(os.path.dirname(path))
    return path


def run(args: argparse.Namespace) -> int:
    threads = args.threads or get_settings().SCORING_THREADS
    service = get_evaluation_service(threads)
    if args.scores:
        if args.checkpoint or args.data:
            raise ConfigError("--scores excludes --checkpoint and --data")
        table = read_score_table(args.scores)
    elif args.checkpoint and args.data:
        table = service.score_files(args.checkpoint, args.data, args.mean_norm_window)
    else:
        raise ConfigError("evaluate needs --checkpoint and --data, or --scores")

    if args.out_scores:
        write_score_table(table, _output(args.out_scores))
    report = service.evaluate(table, split_list(args.languages))
    if args.det_out:
        subset = table.restrict(report.languages) if report.languages != table.lang_names else table
        write_det_points(subset, _output(args.det_out))
    if args.report:
        write_report(report, _output(args.report))
    print(format_report(report))
    return 0
