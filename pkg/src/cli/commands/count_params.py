import argparse
import json

from src.core.models import VARIANTS
from src.services.model_service import format_param_table, get_model_service, load_model_config, write_param_csv


def register(subparsers) -> None:
    parser = subparsers.add_parser("count-params", help="Per-stage and total parameter counts")
    parser.add_argument("--config", help="Model config (key=value file); defaults to the reference network")
    parser.add_argument("--variant", choices=VARIANTS, default=None)
    parser.add_argument("--num-classes", type=int, default=None)
    parser.add_argument("--csv", help="Write the per-stage table as CSV")
    parser.add_argument("--compare", action="store_true",
                        help="Also report all four variants and the local-ms parameter reduction")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    service = get_model_service()
    config = load_model_config(args.config, variant=args.variant, num_classes=args.num_classes)
    report = service.count(config)
    print(format_param_table(report))
    if args.csv:
        write_param_csv(report, args.csv)
    if args.compare:
        reduction = service.reduction_report(config)
        print()
        for variant, total in sorted(reduction["totals"].items(), key=lambda item: item[1]):
            print(f"{variant:<18}{total:>12,}")
        print(
            f"local-ms saves {reduction['measured_vs_baseline_pct']:.1f}% vs dtdnn-baseline and "
            f"{reduction['measured_vs_dkconv_pct']:.1f}% vs dkconv; "
            f"claimed {reduction['claimed_pct']:.0f}%, published sizes imply "
            f"{reduction['published_vs_baseline_pct']:.0f}% / {reduction['published_vs_dkconv_pct']:.0f}%"
        )
        print(json.dumps(reduction["within_15pct_of_published"], sort_keys=True))
    return 0
