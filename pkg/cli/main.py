"""
Command-line entry point.

    python -m cli <mesh|solve|greens|invert|verify> [--config PATH] [--workers N]
                  [--seed S] [--out DIR] [--batch B] [--compare-single]

Exit codes: 0 success, 2 invalid input, 3 no convergence, 4 internal error.
"""

import argparse
import logging
import sys
from typing import List, Optional

from cli.commands import COMMANDS
from cli.run_config import load_run_config
from core.config import get_settings
from core.exceptions import TetraSolveError

logger = logging.getLogger(__name__)

EXIT_INTERNAL = 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="INI run configuration")
    common.add_argument("--workers", type=int, default=None, help="threads for colored EBE scatter")
    common.add_argument("--seed", type=int, default=None, help="seed for manufactured data and noise")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--batch", type=int, default=None, help="right-hand sides per solve")
    common.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="tetrasolve", description="Batched multigrid FE solves for crustal deformation.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("mesh", parents=[common], help="generate a layered tet10 box mesh")
    solve = sub.add_parser("solve", parents=[common], help="solve K u = f for a batch of right-hand sides")
    solve.add_argument("--compare-single", action="store_true", help="also solve each column alone and compare")
    sub.add_parser("greens", parents=[common], help="compute the Green's bank of unit fault slips")
    sub.add_parser("invert", parents=[common], help="regularized slip inversion with L-curve selection")
    sub.add_parser("verify", parents=[common], help="run operator oracle checks")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, (args.log_level or get_settings().LOG_LEVEL).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stdout
    )
    try:
        cfg = load_run_config(
            args.config,
            workers=args.workers,
            seed=args.seed,
            out=args.out,
            batch=args.batch,
            compare_single=getattr(args, "compare_single", False),
        )
        summary = COMMANDS[args.command](cfg)
    except TetraSolveError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"{args.command} failed with an internal error: {e}", exc_info=True)
        return EXIT_INTERNAL

    for key, value in summary.items():
        print(f"{key}={value}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
