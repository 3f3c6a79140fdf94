"""FLAM command-line entry point."""

import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from flam.cli import analysis, fitting, simulate
from flam.config import get_settings
from flam.errors import FlamError, UsageError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s [%(name)s] %(message)s"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker threads for folds / replicates (default: FLAM_THREADS or 1)",
    )
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logging"
    )

    parser = argparse.ArgumentParser(
        prog="flam",
        description="Fused lasso additive model: sparse piecewise-constant additive regression.",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    # Include command groups
    fitting.register(subparsers, common)
    analysis.register(subparsers, common)
    simulate.register(subparsers, common)
    return parser


def configure_logging(verbose: int, default_level: str) -> None:
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = getattr(logging, default_level.upper(), logging.WARNING)
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _requested_alphas(args) -> List[float]:
    if getattr(args, "alpha", None) is not None:
        return [args.alpha]
    return list(getattr(args, "alphas", None) or [])


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = get_settings()
    except ValidationError as exc:
        print(f"[flam] invalid FLAM_* environment settings: {exc}", file=sys.stderr)
        return UsageError.exit_code
    configure_logging(args.verbose, settings.log_level)

    if args.threads is None:
        args.threads = settings.threads
    try:
        if args.threads < 1:
            raise UsageError(f"--threads must be >= 1, got {args.threads}")
        for alpha in _requested_alphas(args):
            if not 0 <= alpha <= 1:
                raise UsageError(f"alpha must lie in [0, 1], got {alpha}")
        return args.handler(args, settings) or 0
    except FlamError as exc:
        print(f"[flam] error: {exc.message}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
