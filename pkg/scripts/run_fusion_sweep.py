#!/usr/bin/env python3
"""Sweep the fusion weight on a two-channel synthetic corpus.

Either channel alone confuses certain class pairs; the sweep shows an
interior weight beating both single-channel endpoints.
"""

import argparse
import json

from protorec import synth
from protorec.harness import fusion_weight_sweep


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--classes", type=int, default=8)
    parser.add_argument("--per-class", type=int, default=40)
    parser.add_argument("--dim", type=int, default=24)
    parser.add_argument("--bins", type=int, default=16)
    parser.add_argument("--seed", type=int, default=5)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    x1, h2, labels = synth.fusion_channels(
        args.classes, args.per_class, dim=args.dim, bins=args.bins, seed=args.seed
    )
    weights = [i / 10 for i in range(11)]
    sweep = fusion_weight_sweep(x1, h2, labels, weights, seed=args.seed)
    for point in sweep:
        bar = "#" * int(50 * point["top1"])
        print(f"w={point['w']:.1f}  top1={point['top1']:.3f}  {bar}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"experiment": "fusion-sweep", "points": sweep}, fh, indent=2)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
