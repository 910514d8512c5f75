#!/usr/bin/env python3
"""Seeded comparison of all attacks on the 2-D toy victim.

Runs each attack from the default geometry with a fixed per-run seed
stream, reports the fraction of runs reaching the derived optimum, and
writes the success-rate table next to the distortion summaries.

    python scripts/toy_study.py --runs 200 --budget 2000 --out toy_table.csv
"""

import argparse
import sys

from hardlabel.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--runs", type=int, default=200)
    parser.add_argument("--budget", type=int, default=2000)
    parser.add_argument("--tol", type=float, default=1e-2)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--attacks",
                        default="boundary,signopt,hsj,rambo-sopt,rambo-hsja")
    parser.add_argument("--out", default=None)
    args = parser.parse_args()
    argv = [
        "toystudy", "--runs", str(args.runs), "--budget", str(args.budget),
        "--tol", str(args.tol), "--seed", str(args.seed),
        "--attacks", args.attacks,
    ]
    if args.out:
        argv += ["--out", args.out]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
