# planemorph/cli/main.py
"""
``planemorph`` console entry point.

Exit codes: 0 success, 1 other library or I/O failure, 2 usage or
configuration error, 3 numeric failure (diverged training).
"""
import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional

from planemorph.cli import commands
from planemorph.common.exceptions import (
    ConfigurationError,
    DivergenceError,
    InvalidParameterError,
    LibraryError,
)
from planemorph.config import LOG_LEVEL

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

LOG_FORMAT = '%(asctime)s - %(name)s [%(levelname)s]: %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'

COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "gen-data": commands.cmd_gen_data,
    "train": commands.cmd_train,
    "eval": commands.cmd_eval,
    "register": commands.cmd_register,
    "bench-attn": commands.cmd_bench_attn,
    "count-params": commands.cmd_count_params,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planemorph",
        description="Plane-attention deformable registration: data generation, training, evaluation.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--debug", action="store_true", help="Enable DEBUG level logging.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen-data", help="Generate a synthetic dataset with ground-truth fields.",
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_gen.add_argument("--out", required=True, help="Output dataset directory.")
    p_gen.add_argument("--n", type=int, default=4, help="Number of pairs.")
    p_gen.add_argument("--size", type=int, default=32, help="Cubic grid edge length.")
    p_gen.add_argument("--labels", type=int, default=4, help="Foreground labels per phantom.")
    p_gen.add_argument("--max-disp", dest="max_disp", type=float, default=3.0,
                       help="Largest ground-truth displacement component (voxels).")
    p_gen.add_argument("--sigma", type=float, default=4.0, help="Smoothing std of the ground-truth field.")
    p_gen.add_argument("--seed", type=int, default=0, help="Base seed.")

    p_train = sub.add_parser("train", help="Train a model on a dataset directory.",
                             formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_train.add_argument("--config", default=None, help="JSON experiment config (defaults if omitted).")
    p_train.add_argument("--data", required=True, help="Dataset directory with manifest.json.")
    p_train.add_argument("--out", required=True, help="Run directory.")

    p_eval = sub.add_parser("eval", help="Evaluate a checkpoint on a dataset.",
                            formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_eval.add_argument("--checkpoint", required=True, help="Checkpoint manifest path.")
    p_eval.add_argument("--data", required=True, help="Dataset directory with manifest.json.")
    p_eval.add_argument("--report", required=True, help="Output JSON report.")
    p_eval.add_argument("--threads", type=int, default=None,
                        help="Evaluation workers (defaults to PLANEMORPH_THREADS).")

    p_reg = sub.add_parser("register", help="Register one moving volume to a fixed volume.",
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_reg.add_argument("--checkpoint", required=True, help="Checkpoint manifest path.")
    p_reg.add_argument("--fixed", required=True, help="Fixed volume (MVOL).")
    p_reg.add_argument("--moving", required=True, help="Moving volume (MVOL).")
    p_reg.add_argument("--out", required=True, help="Output warped volume (MVOL).")
    p_reg.add_argument("--field", required=True, help="Output displacement field (MVOL).")

    p_bench = sub.add_parser("bench-attn", help="Tabulate attention cost per strategy.",
                             formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_bench.add_argument("--grid", required=True, help="Token lattice as H,W,D.")
    p_bench.add_argument("--dim", type=int, default=96, help="Token channel width C.")
    p_bench.add_argument("--out", required=True, help="Output CSV.")

    p_count = sub.add_parser("count-params", help="Print parameter and multiply-add counts.",
                             formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p_count.add_argument("--config", default=None, help="JSON experiment config (defaults if omitted).")
    p_count.add_argument("--size", type=int, default=0,
                         help="Cubic input edge for the multiply-add count (0 skips it).")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parses `argv`, runs the subcommand and returns its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e_exit:
        return int(e_exit.code) if isinstance(e_exit.code, int) else EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if args.debug else getattr(logging, LOG_LEVEL, logging.INFO),
                        format=LOG_FORMAT, datefmt=LOG_DATEFMT)
    if args.debug:
        logging.getLogger().setLevel(logging.DEBUG)
        logger.debug("Debug logging enabled.")

    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as e_conf:
        logger.error("CONFIGURATION ERROR: %s", e_conf)
        return EXIT_USAGE
    except InvalidParameterError as e_param:
        logger.error("INVALID INPUT: %s", e_param)
        return EXIT_USAGE
    except DivergenceError as e_div:
        logger.error("NUMERIC FAILURE: %s", e_div)
        return EXIT_NUMERIC
    except LibraryError as e_lib:
        logger.error("LIBRARY ERROR: %s", e_lib, exc_info=args.debug)
        return EXIT_FAILURE
    except OSError as e_os:
        logger.error("I/O ERROR: %s", e_os, exc_info=args.debug)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
