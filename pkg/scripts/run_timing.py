#!/usr/bin/env python3
"""Per-query timing of brute-force vs forest search, raw vs PCA-compressed.

Defaults are desk-sized; pass --items 50000 --dim 512 for the full-scale run.
"""

import argparse
import json

import numpy as np

from protorec import synth
from protorec.harness import timing_benchmark


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--items", type=int, default=10000)
    parser.add_argument("--dim", type=int, default=128)
    parser.add_argument("--classes", type=int, default=64)
    parser.add_argument("--queries", type=int, default=1020)
    parser.add_argument("--budget", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=21)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    x, _ = synth.class_clusters(
        args.classes, args.items // args.classes + 1, args.dim, noise=0.15, seed=args.seed
    )
    x = x[: args.items]
    rng = np.random.default_rng(args.seed)
    queries = x[rng.choice(args.items, args.queries, replace=False)] + rng.normal(
        0, 0.15, (args.queries, args.dim)
    )
    report = timing_benchmark(x, queries, budget=args.budget, seed=args.seed)
    print(f"items={report['n_items']} dim={report['dim']} pca_dim={report['pca_components']}")
    for row in report["rows"]:
        print(f"  {row['name']:10s} {row['mean_ms']:8.3f} ms  (std {row['std_ms']:.3f})")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
