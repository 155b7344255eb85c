import sys
from typing import Optional, Sequence

from src.cli.app import create_app
from src.core.errors import DmscError, NumericError
from src.utils.logging_utils import get_app_logger, set_verbosity

# Initialize logger
logger = get_app_logger()

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point of the `dmsc` command; returns the process exit code"""
    parser = create_app()
    args = parser.parse_args(argv)
    set_verbosity(args.verbose)
    try:
        return args.handler(args)
    except NumericError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DmscError, OSError) as e:
        logger.error(f"{args.command} failed: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
