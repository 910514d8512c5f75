#!/usr/bin/env python3
"""Attack comparison on the engineered plateau victim.

Runs a balanced campaign per attack against fresh plateau oracles and
prints mean/median/std distortion plus the hard-case count at the chosen
threshold. Reports land in <out>/<attack>/.

    python scripts/plateau_benchmark.py --budget 10000 --pairs 50
"""

import argparse
import os
import sys
import time

import numpy as np

from hardlabel.harness import (
    ProtocolConfig,
    ProtocolMode,
    enumerate_pairs,
    run_campaign,
    synthesize_dataset,
    write_report,
)
from hardlabel.oracles import plateau_model
from hardlabel.presets import ATTACK_NAMES, preset


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--preset", default="default")
    parser.add_argument("--budget", type=int, default=10_000)
    parser.add_argument("--pairs", type=int, default=50)
    parser.add_argument("--per-class", type=int, default=8, dest="per_class")
    parser.add_argument("--hard-threshold", type=float, default=3.0,
                        dest="hard_threshold")
    parser.add_argument("--master-seed", type=int, default=5, dest="master_seed")
    parser.add_argument("--attacks", default="signopt,hsj,boundary,rambo-sopt,rambo-hsja")
    parser.add_argument("--out", default="plateau_reports")
    args = parser.parse_args()

    factory = lambda: plateau_model(args.preset)  # noqa: E731
    dataset = synthesize_dataset(factory(), args.per_class, seed=11)
    cfg = ProtocolConfig(
        mode=ProtocolMode.BALANCED, n_source_classes=factory().class_count,
        n_samples_per_class=max(args.pairs // 8, 1), m_targets_per_group=3,
        budget=args.budget, hard_threshold=args.hard_threshold,
        master_seed=args.master_seed,
    )
    pairs = enumerate_pairs(cfg, dataset, factory())[: args.pairs]
    print(f"{len(pairs)} pairs at budget {args.budget}")
    settings = preset("plateau")
    for attack in args.attacks.split(","):
        attack = attack.strip()
        if attack not in ATTACK_NAMES:
            print(f"skipping unknown attack {attack!r}", file=sys.stderr)
            continue
        t0 = time.time()
        report = run_campaign(
            dataset, pairs, attack, factory, args.budget, settings,
            hard_threshold=args.hard_threshold, master_seed=args.master_seed,
        )
        write_report(report, os.path.join(args.out, attack))
        finals = np.asarray(report.finals())
        agg = report.aggregates()
        print(
            f"{attack:11s} mean={finals.mean():.3f} median={np.median(finals):.3f} "
            f"std={finals.std():.3f} hard={agg['hard_count']} "
            f"({time.time() - t0:.0f}s)"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
