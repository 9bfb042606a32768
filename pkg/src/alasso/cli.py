"""Command-line entry point.

Subcommands: ``gen`` writes a synthetic problem, ``solve`` runs one
certified solve, ``sweep`` walks the lambda grid and reports risk
estimates, ``validate`` runs a named invariant suite.  Exit status is
nonzero on solver non-convergence, failed validation checks, or an
empty sweep.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .bench import VALIDATE_SUITES, cmd_gen, cmd_solve, cmd_sweep, \
    cmd_validate
from .config import load_config, with_overrides


def build_parser():
    parser = argparse.ArgumentParser(
        prog="alasso",
        description="l1-analysis regularization with unbiased risk "
                    "estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic problem")
    gen.add_argument("--config", required=True, help="experiment config")
    gen.add_argument("--out", default=".", help="output directory")
    gen.add_argument("--seed", type=int, default=None,
                     help="override the config seed")

    solve = sub.add_parser("solve", help="solve at one lambda")
    solve.add_argument("--config", required=True)
    solve.add_argument("--lambda", dest="lam", type=float, required=True,
                       help="regularization parameter")
    solve.add_argument("--out", default=".",
                       help="problem directory (from gen)")

    sweep = sub.add_parser("sweep", help="solve along the lambda grid")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--out", default=".",
                       help="problem directory (from gen)")
    sweep.add_argument("--risk", choices=("pred", "proj", "est", "all"),
                       default=None, help="override the configured risks")
    sweep.add_argument("--probes", type=int, default=None,
                       help="Monte Carlo probes per grid point "
                            "(0 for dense traces)")
    sweep.add_argument("--seed", type=int, default=None,
                       help="override the config seed")

    val = sub.add_parser("validate", help="run an invariant suite")
    val.add_argument("--suite", required=True, choices=VALIDATE_SUITES)
    val.add_argument("--seed", type=int, default=0)
    val.add_argument("--out", default=".", help="report directory")
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args):
    if args.command == "validate":
        status, _ = cmd_validate(args.suite, seed=args.seed,
                                 out_dir=args.out)
        return status

    config = load_config(args.config)
    if args.command == "gen":
        config = with_overrides(config, seed=args.seed)
        result = cmd_gen(config, args.out)
        print(f"sigma = {result.sigma:.17g}")
        print(f"psnr = {result.psnr:.17g} dB")
        return 0
    if args.command == "solve":
        status, _ = cmd_solve(config, args.lam, args.out)
        return status
    if args.command == "sweep":
        risks = None
        if args.risk is not None:
            risks = ("pred", "proj", "est") if args.risk == "all" \
                else (args.risk,)
        result = cmd_sweep(config, args.out, risks=risks,
                           probes=args.probes, seed=args.seed)
        return 0 if result.selected_lam is not None else 1
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
