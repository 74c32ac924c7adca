"""Command line entry points.

``protorec eval ...`` runs the evaluation procedures and writes JSON (plus
optional CSV) reports; ``protorec synth ...`` materializes synthetic corpora;
``protorec serve`` starts the HTTP service.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, synth
from .harness import DatasetBundle, ExperimentConfig
from .pca import fit as pca_fit


def _write_report(out: str | None, report: dict) -> None:
    text = json.dumps(report, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)


def _write_csv(path: str | None, rows: list[dict]) -> None:
    if not path or not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _common_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True, help="embedding file or export directory")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--l2", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--pca", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--pca-threshold", type=float, default=0.95)
    p.add_argument("--index", default="brute", help="brute | ann:<budget> | ann:inf")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--csv", default=None, help="also write row data as CSV")


def _config_from(args: argparse.Namespace) -> ExperimentConfig:
    return ExperimentConfig(
        dataset=args.dataset,
        folds=args.folds,
        k=args.k,
        l2=args.l2,
        pca=args.pca,
        pca_threshold=args.pca_threshold,
        seed=args.seed,
        index=args.index,
    )


def cmd_eval_kfold(args: argparse.Namespace) -> int:
    cfg = _config_from(args)
    report = harness.kfold_accuracy(cfg)
    payload = {"experiment": "kfold", "config": vars(args) | {}, **report.to_dict()}
    payload["config"].pop("func", None)
    _write_report(args.out, payload)
    _write_csv(args.csv, [vars(f) for f in report.folds])
    return 0


def cmd_eval_over_time(args: argparse.Namespace) -> int:
    bundle = harness.load_dataset(args.dataset)
    points = harness.accuracy_over_time(bundle, step=args.step, l2=args.l2, k=args.k)
    payload = {"experiment": "over-time", "step": args.step, "points": points}
    _write_report(args.out, payload)
    _write_csv(args.csv, points)
    return 0


def cmd_eval_min_samples(args: argparse.Namespace) -> int:
    cfg = _config_from(args)
    points = harness.min_samples_sweep(cfg, args.min_from, args.min_to)
    payload = {"experiment": "min-samples", "points": points}
    _write_report(args.out, payload)
    _write_csv(args.csv, points)
    return 0


def cmd_eval_timing(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    x, _ = synth.class_clusters(
        args.classes, args.items // args.classes, args.dim, seed=args.seed
    )
    queries = x[rng.choice(x.shape[0], size=args.queries, replace=False)] + rng.normal(
        0.0, 0.05, size=(args.queries, args.dim)
    )
    report = harness.timing_benchmark(
        x,
        queries,
        pca_threshold=args.pca_threshold,
        budget=args.budget,
        seed=args.seed,
    )
    payload = {"experiment": "timing", **report}
    _write_report(args.out, payload)
    _write_csv(args.csv, report["rows"])
    return 0


def cmd_eval_pca_report(args: argparse.Namespace) -> int:
    bundle = harness.load_dataset(args.dataset)
    x = harness.l2_rows(bundle.x) if args.l2 else bundle.x
    model = pca_fit(x, args.pca_threshold)
    payload = {
        "experiment": "pca-report",
        "dim": int(bundle.x.shape[1]),
        "n_samples": int(bundle.x.shape[0]),
        "threshold": args.pca_threshold,
        "n_components": model.n_components,
        "explained_head": [float(r) for r in model.explained_variance_ratio[:16]],
    }
    _write_report(args.out, payload)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    if args.kind == "clusters":
        x, labels = synth.class_clusters(
            args.classes, args.per_class, args.dim, noise=args.noise, seed=args.seed
        )
        bundle = DatasetBundle(x=x, labels=labels)
    elif args.kind == "norms":
        x, labels = synth.norm_confounded_clusters(
            args.classes, args.per_class, args.dim, seed=args.seed
        )
        bundle = DatasetBundle(x=x, labels=labels)
    elif args.kind == "drift":
        x, labels, ts = synth.drifting_clusters(
            args.classes,
            args.per_class * args.classes,
            args.dim,
            noise_growth=args.drift,
            seed=args.seed,
        )
        bundle = DatasetBundle(x=x, labels=labels, timestamps=ts)
    else:
        raise SystemExit(f"unknown synthetic kind {args.kind!r}")
    out = harness.save_dataset(args.out, bundle)
    print(f"wrote {bundle.x.shape[0]} samples to {out}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import run

    run(args.config, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protorec")
    sub = parser.add_subparsers(dest="command", required=True)

    eval_parser = sub.add_parser("eval", help="run evaluation procedures")
    eval_sub = eval_parser.add_subparsers(dest="experiment", required=True)

    p = eval_sub.add_parser("kfold", help="stratified k-fold top-1/top-10")
    _common_eval_flags(p)
    p.set_defaults(func=cmd_eval_kfold)

    p = eval_sub.add_parser("over-time", help="leave-one-out accuracy over prefixes")
    _common_eval_flags(p)
    p.add_argument("--step", type=int, default=500)
    p.set_defaults(func=cmd_eval_over_time)

    p = eval_sub.add_parser("min-samples", help="sweep the class-size floor")
    _common_eval_flags(p)
    p.add_argument("--min-from", type=int, default=1)
    p.add_argument("--min-to", type=int, default=100)
    p.set_defaults(func=cmd_eval_min_samples)

    p = eval_sub.add_parser("timing", help="per-query timing comparisons")
    p.add_argument("--items", type=int, default=50000)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--classes", type=int, default=64)
    p.add_argument("--queries", type=int, default=1000)
    p.add_argument("--budget", type=int, default=1000)
    p.add_argument("--pca-threshold", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_eval_timing)

    p = eval_sub.add_parser("pca-report", help="components kept at a variance threshold")
    p.add_argument("--dataset", required=True)
    p.add_argument("--pca-threshold", type=float, default=0.95)
    p.add_argument("--l2", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval_pca_report)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("kind", choices=["clusters", "norms", "drift"])
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--drift", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--config", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
