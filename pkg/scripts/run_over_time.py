#!/usr/bin/env python3
"""Leave-one-out accuracy over growing dataset prefixes, comparing a
constant-quality stream against one whose features degrade over time."""

import argparse
import json

import numpy as np

from protorec import synth
from protorec.harness import DatasetBundle, accuracy_over_time


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--samples", type=int, default=1500)
    parser.add_argument("--dim", type=int, default=24)
    parser.add_argument("--step", type=int, default=300)
    parser.add_argument("--drift", type=float, default=6.0)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    curves = {}
    for name, growth in (("constant", 0.0), ("degrading", args.drift)):
        x, labels, ts = synth.drifting_clusters(
            args.classes,
            args.samples,
            args.dim,
            noise_start=0.45,
            noise_growth=growth,
            seed=args.seed,
        )
        points = accuracy_over_time(
            DatasetBundle(x=x, labels=labels, timestamps=ts), step=args.step
        )
        curves[name] = points
        print(f"\n{name} stream:")
        for p in points:
            print(f"  n={p['n']:5d}  top1={p['top1']:.3f}  classes={p['classes']}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"experiment": "over-time", "curves": curves}, fh, indent=2)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
