#!/usr/bin/env python3
"""Per-task wall-time table for every solver on a common episode suite."""

import argparse

from fsi.bench import BenchConfig, METHODS, time_per_task
from fsi.episodes import TaskConfig
from fsi.features import SyntheticConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--shots", type=int, default=5)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    cfg = BenchConfig(
        method="tim-gd",
        task=TaskConfig(ways=5, shots=args.shots, queries_per_class=15, seed=7),
        source=SyntheticConfig(dim=64, num_classes=20, per_class=80,
                               spread=0.25, seed=1),
        num_episodes=args.episodes,
    )
    table = time_per_task(cfg, methods=METHODS, repeats=args.repeats)
    print(f"{'method':>10} | ms/task (mean ± sd over {args.repeats} repeats)")
    for method, row in table.items():
        print(f"{method:>10} | {row['mean'] * 1e3:8.2f} ± {row['sd'] * 1e3:.2f}")


if __name__ == "__main__":
    main()
