"""Module for training and evaluating volume classifiers."""
import argparse
import datetime
import logging
import time
from argparse import RawTextHelpFormatter

from .scripts import ablate, benchmark, check_grads, describe_arch, gen_phantoms, params, train


def make_parser() -> argparse.ArgumentParser:
    """Create parser.

    :rtype: argparse.ArgumentParser
    """
    parser = argparse.ArgumentParser(
        description="Volume classification experiments.",
        formatter_class=RawTextHelpFormatter,
    )
    parser.add_argument(
        "command",
        metavar="<command>",
        help=(
            "'train', 'benchmark', 'ablate', 'params', 'describe', "
            "'gen-phantoms' or 'check-grads'."
        ),
    )
    parser.add_argument("--config", metavar="<config>", help="Experiment config (JSON).")
    parser.add_argument("--grid", metavar="<grid>", help="Ablation grid (JSON).")
    parser.add_argument(
        "--arch", metavar="<arch>", default="all", help="Variant name, or 'all' for params."
    )
    parser.add_argument("--out", metavar="<out>", default=None, help="Output path.")
    parser.add_argument("--n", metavar="<n>", type=int, default=200, help="Number of phantoms.")
    parser.add_argument(
        "--difficulty", metavar="<difficulty>", type=float, default=0.2, help="Phantom difficulty."
    )
    parser.add_argument(
        "--class_balance",
        metavar="<class_balance>",
        type=float,
        default=0.7,
        help="Fraction of label-1 phantoms.",
    )
    parser.add_argument("--size", metavar="<size>", type=int, default=64, help="In-plane size.")
    parser.add_argument(
        "--folds", metavar="<folds>", type=int, default=0, help="Folds to store with phantoms."
    )
    parser.add_argument("--seed", metavar="<seed>", type=int, default=0, help="Seed.")
    parser.add_argument(
        "--seeds", metavar="<seeds>", type=int, default=1, help="Seeds for check-grads."
    )
    parser.add_argument(
        "--n_coords",
        metavar="<n_coords>",
        type=int,
        default=8,
        help="Input coordinates per cell for check-grads.",
    )
    parser.add_argument(
        "--log_level", metavar="<log_level>", default="INFO", help="Logging level."
    )
    return parser


if __name__ == "__main__":
    args = make_parser().parse_args()
    logging.basicConfig(
        level=args.log_level.upper(), format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )

    start_time = time.time()

    if args.command == "train":
        train(args.config, args.out)
    elif args.command == "benchmark":
        benchmark(args.out)
    elif args.command == "ablate":
        ablate(args.grid, args.out)
    elif args.command == "params":
        params(args.arch)
    elif args.command == "describe":
        describe_arch(args.arch if args.arch != "all" else "f-R2D", size=args.size)
    elif args.command == "gen-phantoms":
        gen_phantoms(
            args.n,
            args.difficulty,
            args.seed,
            args.out or "phantoms",
            args.class_balance,
            args.size,
            args.folds,
        )
    elif args.command == "check-grads":
        archs = None if args.arch == "all" else [args.arch]
        check_grads(args.seeds, args.n_coords, archs, args.out)
    else:
        print("Command is not recognized.")

    finish_time = time.time()
    diff = str(datetime.timedelta(seconds=finish_time - start_time))
    print(f"{args.command} completed in {diff}")
