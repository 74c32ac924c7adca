"""Evaluation procedures: k-fold top-1/top-10 accuracy, leave-one-out
accuracy over dataset prefixes, a minimum-samples-per-class sweep, fused
two-channel weight sweeps, and per-query timing comparisons.

Folds are stratified and seed-reproducible.  PCA models and feature-code
histograms are always fitted on the training side of a fold only.  Classes
with fewer samples than folds stay on the training side and are never used
as queries.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import pca as pca_mod
from .ann import AnnIndex
from .features import EmbeddingManifest, read_embedding_file, write_embedding_file
from .vectors import Descriptor, distances_to

DEFAULT_FOLDS = 5
TOP_N = 10


class HarnessError(ValueError):
    """Base class for harness errors."""


class DatasetTooSmall(HarnessError):
    """Not enough samples or classes for the requested procedure."""


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str | None = None
    folds: int = DEFAULT_FOLDS
    k: int = 1
    l2: bool = True
    pca: bool = False
    pca_threshold: float = 0.95
    metric: str = "euclidean"
    seed: int = 0
    index: str = "brute"  # "brute" | "ann:<budget>" | "ann:inf"
    n_trees: int = 100
    leaf_capacity: int = 16

    def __post_init__(self) -> None:
        if self.folds < 2:
            raise HarnessError("folds must be at least 2")
        self.index_budget()  # validate

    def index_budget(self) -> int | None | str:
        """Parsed index mode: 'brute', or the ann budget (None = unbounded)."""
        if self.index == "brute":
            return "brute"
        if self.index.startswith("ann:"):
            tail = self.index[4:]
            if tail == "inf":
                return None
            try:
                return int(tail)
            except ValueError:
                pass
        raise HarnessError(f"bad index mode {self.index!r}")


@dataclass
class DatasetBundle:
    x: np.ndarray
    labels: list[str]
    ids: list[str] = field(default_factory=list)
    timestamps: np.ndarray | None = None
    metadata: list[dict] | None = None
    metric: str = "euclidean"

    def __post_init__(self) -> None:
        if self.x.shape[0] != len(self.labels):
            raise HarnessError("labels and rows disagree in length")
        if not self.ids:
            self.ids = [str(i) for i in range(self.x.shape[0])]

    def subset(self, rows: np.ndarray) -> "DatasetBundle":
        return DatasetBundle(
            x=self.x[rows],
            labels=[self.labels[i] for i in rows],
            ids=[self.ids[i] for i in rows],
            timestamps=self.timestamps[rows] if self.timestamps is not None else None,
            metadata=[self.metadata[i] for i in rows] if self.metadata else None,
            metric=self.metric,
        )


def save_dataset(
    out_dir: str | Path,
    bundle: DatasetBundle,
    source_name: str = "synthetic",
) -> Path:
    """Write a bundle in the export layout the CLI consumes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = EmbeddingManifest(source_name, int(bundle.x.shape[1]), bundle.metric)
    write_embedding_file(
        out / "descriptors.tsv",
        manifest,
        (
            (bundle.ids[i], bundle.labels[i], bundle.x[i])
            for i in range(bundle.x.shape[0])
        ),
    )
    with open(out / "metadata.jsonl", "w", encoding="utf-8") as fh:
        for i in range(bundle.x.shape[0]):
            row: dict = {"id": bundle.ids[i], "class_synset": bundle.labels[i]}
            if bundle.timestamps is not None:
                row["timestamp"] = float(bundle.timestamps[i])
            if bundle.metadata:
                row["metadata"] = bundle.metadata[i]
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
    return out


def load_dataset(path: str | Path) -> DatasetBundle:
    """Load a bare embedding file or an export-layout directory."""
    p = Path(path)
    desc_path = p / "descriptors.tsv" if p.is_dir() else p
    manifest, records = read_embedding_file(desc_path)
    if not records:
        raise DatasetTooSmall("dataset holds no records")
    ids = [r[0] for r in records]
    labels = [r[1] for r in records]
    x = np.stack([r[2] for r in records])
    timestamps = None
    metadata = None
    meta_path = p / "metadata.jsonl" if p.is_dir() else None
    if meta_path is not None and meta_path.exists():
        by_id: dict[str, dict] = {}
        with open(meta_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    by_id[str(row["id"])] = row
        ts = [by_id.get(i, {}).get("timestamp") for i in ids]
        if all(t is not None for t in ts):
            timestamps = np.array(ts, dtype=np.float64)
        metadata = [by_id.get(i, {}).get("metadata") or {} for i in ids]
    return DatasetBundle(
        x=x, labels=labels, ids=ids, timestamps=timestamps, metadata=metadata,
        metric=manifest.metric,
    )


# -- shared primitives ---------------------------------------------------------


def l2_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise HarnessError("cannot l2-normalize zero rows")
    return x / norms


def exact_topk(
    train: np.ndarray,
    q: np.ndarray,
    k: int,
    metric: str,
    train_sqnorms: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest rows as (indices, distances), ties by ascending index."""
    if metric == "euclidean":
        if train_sqnorms is None:
            train_sqnorms = np.einsum("ij,ij->i", train, train)
        d2 = train_sqnorms - 2.0 * (train @ q) + float(q @ q)
        dists = np.sqrt(np.maximum(d2, 0.0))
    else:
        dists = distances_to(train, q, metric)
    k = min(k, dists.shape[0])
    order = np.lexsort((np.arange(dists.shape[0]), dists))[:k]
    return order, dists[order]


def stratified_folds(labels: Sequence[str], folds: int, seed: int) -> np.ndarray:
    """Per-class round-robin fold assignment after a seeded shuffle."""
    rng = np.random.default_rng(seed)
    labels_arr = np.asarray(labels)
    fold_of = np.empty(labels_arr.shape[0], dtype=np.int64)
    for cls in np.unique(labels_arr):
        idx = np.nonzero(labels_arr == cls)[0]
        rng.shuffle(idx)
        fold_of[idx] = np.arange(idx.shape[0]) % folds
    return fold_of


def _vote(labels: list[str], dists: np.ndarray, k: int) -> str:
    """Majority class among the k nearest; ties by mean distance, then name."""
    take = min(k, len(labels))
    counts: dict[str, int] = {}
    for lbl in labels[:take]:
        counts[lbl] = counts.get(lbl, 0) + 1
    top = max(counts.values())
    contenders = sorted(c for c, n in counts.items() if n == top)
    if len(contenders) == 1:
        return contenders[0]
    means = {
        c: float(np.mean([dists[i] for i in range(take) if labels[i] == c]))
        for c in contenders
    }
    best = min(means.values())
    return min(c for c, m in means.items() if m == best)


# -- k-fold ---------------------------------------------------------------------


@dataclass
class FoldResult:
    fold: int
    top1: float
    top10: float
    n_queries: int
    pca_components: int | None = None


@dataclass
class KFoldReport:
    folds: list[FoldResult]
    mean_top1: float
    mean_top10: float
    n_samples: int
    n_classes: int

    def to_dict(self) -> dict:
        return {
            "folds": [vars(f) for f in self.folds],
            "mean_top1": self.mean_top1,
            "mean_top10": self.mean_top10,
            "n_samples": self.n_samples,
            "n_classes": self.n_classes,
        }


def kfold_accuracy(cfg: ExperimentConfig, bundle: DatasetBundle | None = None) -> KFoldReport:
    if bundle is None:
        if cfg.dataset is None:
            raise HarnessError("config names no dataset")
        bundle = load_dataset(cfg.dataset)
    labels = np.asarray(bundle.labels)
    classes, counts = np.unique(labels, return_counts=True)
    if classes.shape[0] < 2:
        raise DatasetTooSmall("need at least 2 classes")
    count_of = dict(zip(classes.tolist(), counts.tolist()))
    queryable = np.array([count_of[l] >= cfg.folds for l in bundle.labels])
    if not queryable.any():
        raise DatasetTooSmall("no class has enough samples to be queried")

    fold_of = stratified_folds(bundle.labels, cfg.folds, cfg.seed)
    mode = cfg.index_budget()
    results: list[FoldResult] = []
    for f in range(cfg.folds):
        query_rows = np.nonzero((fold_of == f) & queryable)[0]
        train_rows = np.nonzero((fold_of != f) | ~queryable)[0]
        if query_rows.size == 0:
            continue
        xq = bundle.x[query_rows]
        xt = bundle.x[train_rows]
        yq = labels[query_rows]
        yt = labels[train_rows].tolist()
        metric = bundle.metric if bundle.metric else cfg.metric
        if cfg.l2 and metric != "jensen-shannon":
            xq = l2_rows(xq)
            xt = l2_rows(xt)
        n_components = None
        if cfg.pca:
            model = pca_mod.fit(xt, cfg.pca_threshold)
            n_components = model.n_components
            xt = pca_mod.transform_matrix(xt, model)
            xq = pca_mod.transform_matrix(xq, model)
            metric = "euclidean"

        top1_hits = 0
        top10_hits = 0
        retrieve = max(TOP_N, cfg.k)
        if mode == "brute":
            sqn = np.einsum("ij,ij->i", xt, xt) if metric == "euclidean" else None
            for qi in range(xq.shape[0]):
                order, dists = exact_topk(xt, xq[qi], retrieve, metric, sqn)
                neighbor_labels = [yt[j] for j in order]
                if _vote(neighbor_labels, dists, cfg.k) == yq[qi]:
                    top1_hits += 1
                if yq[qi] in neighbor_labels[:TOP_N]:
                    top10_hits += 1
        else:
            items = [(i, Descriptor(xt[i], metric=metric)) for i in range(xt.shape[0])]
            index = AnnIndex.from_items(
                items,
                n_trees=cfg.n_trees,
                leaf_capacity=cfg.leaf_capacity,
                seed=cfg.seed,
            )
            for qi in range(xq.shape[0]):
                hits = index.search(
                    Descriptor(xq[qi], metric=metric), retrieve, max_nodes=mode
                )
                neighbor_labels = [yt[h.prototype_id] for h in hits]
                dists = np.array([h.distance for h in hits])
                if _vote(neighbor_labels, dists, cfg.k) == yq[qi]:
                    top1_hits += 1
                if yq[qi] in neighbor_labels[:TOP_N]:
                    top10_hits += 1
        results.append(
            FoldResult(
                fold=f,
                top1=top1_hits / query_rows.size,
                top10=top10_hits / query_rows.size,
                n_queries=int(query_rows.size),
                pca_components=n_components,
            )
        )
    if not results:
        raise DatasetTooSmall("no fold produced any queries")
    return KFoldReport(
        folds=results,
        mean_top1=float(np.mean([r.top1 for r in results])),
        mean_top10=float(np.mean([r.top10 for r in results])),
        n_samples=int(labels.shape[0]),
        n_classes=int(classes.shape[0]),
    )


# -- accuracy over time -----------------------------------------------------------


def accuracy_over_time(
    bundle: DatasetBundle,
    step: int = 500,
    l2: bool = True,
    k: int = 1,
) -> list[dict]:
    """Leave-one-out top-1 over growing timestamp-ordered prefixes."""
    if bundle.timestamps is None:
        raise HarnessError("over-time evaluation requires timestamps")
    if step < 1:
        raise HarnessError("step must be positive")
    n = bundle.x.shape[0]
    if n < 2:
        raise DatasetTooSmall("need at least 2 samples")
    order = np.argsort(bundle.timestamps, kind="stable")
    x = bundle.x[order]
    labels = [bundle.labels[i] for i in order]
    metric = bundle.metric
    if l2 and metric != "jensen-shannon":
        x = l2_rows(x)

    sizes = list(range(step, n + 1, step))
    if not sizes or sizes[-1] != n:
        sizes.append(n)
    points = []
    for size in sizes:
        if size < 2:
            continue  # leave-one-out undefined on a single sample
        px = x[:size]
        plabels = labels[:size]
        hits = 0
        sqn = np.einsum("ij,ij->i", px, px) if metric == "euclidean" else None
        for qi in range(size):
            row_order, dists = exact_topk(px, px[qi], k + 1, metric, sqn)
            keep = [(j, dists[i]) for i, j in enumerate(row_order) if j != qi][:k]
            neighbor_labels = [plabels[j] for j, _ in keep]
            neighbor_dists = np.array([d for _, d in keep])
            if _vote(neighbor_labels, neighbor_dists, k) == plabels[qi]:
                hits += 1
        points.append(
            {"n": size, "top1": hits / size, "classes": len(set(plabels))}
        )
    return points


# -- minimum samples per class -----------------------------------------------------


def min_samples_sweep(
    cfg: ExperimentConfig,
    min_from: int = 1,
    min_to: int = 100,
    bundle: DatasetBundle | None = None,
) -> list[dict]:
    """K-fold accuracy restricted to classes with at least m samples."""
    if bundle is None:
        if cfg.dataset is None:
            raise HarnessError("config names no dataset")
        bundle = load_dataset(cfg.dataset)
    labels = np.asarray(bundle.labels)
    classes, counts = np.unique(labels, return_counts=True)
    count_of = dict(zip(classes.tolist(), counts.tolist()))
    points = []
    for m in range(min_from, min_to + 1):
        keep_classes = {c for c in classes.tolist() if count_of[c] >= m}
        rows = np.nonzero(np.isin(labels, sorted(keep_classes)))[0]
        point: dict = {"min_samples": m, "classes": len(keep_classes)}
        try:
            if rows.size == 0:
                raise DatasetTooSmall("no classes qualify")
            report = kfold_accuracy(cfg, bundle.subset(rows))
            point["top1"] = report.mean_top1
            point["top10"] = report.mean_top10
        except DatasetTooSmall:
            point["top1"] = None
            point["top10"] = None
        points.append(point)
    return points


# -- fused-channel weight sweep ------------------------------------------------------


def fusion_weight_sweep(
    x1: np.ndarray,
    h2: np.ndarray,
    labels: Sequence[str],
    weights: Sequence[float],
    folds: int = DEFAULT_FOLDS,
    seed: int = 0,
) -> list[dict]:
    """Top-1 k-fold accuracy of the fused distance for each weight.

    Channel 1 distances are Euclidean on unit-normalized rows, rescaled by
    1/2 so their range matches the [0, 1] histogram divergence of channel 2.
    """
    labels_arr = np.asarray(labels)
    x1 = l2_rows(np.asarray(x1, dtype=np.float64))
    h2 = np.asarray(h2, dtype=np.float64)
    fold_of = stratified_folds(list(labels_arr), folds, seed)
    counts = {c: int(n) for c, n in zip(*np.unique(labels_arr, return_counts=True))}
    queryable = np.array([counts[l] >= folds for l in labels_arr])

    results = []
    for w in weights:
        if not 0.0 <= w <= 1.0:
            raise HarnessError(f"fusion weight {w} outside [0, 1]")
        hits = 0
        total = 0
        for f in range(folds):
            q_rows = np.nonzero((fold_of == f) & queryable)[0]
            t_rows = np.nonzero((fold_of != f) | ~queryable)[0]
            if q_rows.size == 0:
                continue
            t_sqn = np.einsum("ij,ij->i", x1[t_rows], x1[t_rows])
            for qi in q_rows:
                d1 = np.sqrt(
                    np.maximum(
                        t_sqn - 2.0 * (x1[t_rows] @ x1[qi]) + float(x1[qi] @ x1[qi]),
                        0.0,
                    )
                ) / 2.0  # unit vectors: halving maps the Euclidean range onto [0, 1]
                d2 = distances_to(h2[t_rows], h2[qi], "jensen-shannon")
                fused = w * d1 + (1.0 - w) * d2
                best = int(np.argmin(fused))
                hits += labels_arr[t_rows[best]] == labels_arr[qi]
                total += 1
        results.append({"w": float(w), "top1": hits / total if total else None})
    return results


# -- timing --------------------------------------------------------------------------


def timing_benchmark(
    x: np.ndarray,
    queries: np.ndarray,
    pca_threshold: float = 0.95,
    budget: int = 1000,
    n_trees: int = 100,
    leaf_capacity: int = 16,
    warmup: int = 20,
    seed: int = 0,
) -> dict:
    """Mean and stdev of per-query wall time for brute/ANN x raw/PCA search."""
    if queries.shape[0] <= warmup:
        raise HarnessError("need more queries than warmup runs")
    x = l2_rows(np.asarray(x, dtype=np.float64))
    queries = l2_rows(np.asarray(queries, dtype=np.float64))

    model = pca_mod.fit(x, pca_threshold)
    xp = np.ascontiguousarray(pca_mod.transform_matrix(x, model))
    qp = np.ascontiguousarray(pca_mod.transform_matrix(queries, model))

    def make_index(data: np.ndarray) -> AnnIndex:
        items = [(i, Descriptor(data[i])) for i in range(data.shape[0])]
        return AnnIndex.from_items(
            items,
            n_trees=n_trees,
            max_nodes=budget,
            leaf_capacity=leaf_capacity,
            seed=seed,
        )

    index_nc = make_index(x)
    index_pca = make_index(xp)
    sqn_nc = np.einsum("ij,ij->i", x, x)
    sqn_pca = np.einsum("ij,ij->i", xp, xp)

    def time_queries(run) -> tuple[float, float]:
        times = []
        for qi in range(queries.shape[0]):
            start = time.perf_counter()
            run(qi)
            elapsed = time.perf_counter() - start
            if qi >= warmup:
                times.append(elapsed * 1000.0)
        return float(np.mean(times)), float(np.std(times))

    rows = {}
    rows["brute_nc"] = time_queries(
        lambda qi: exact_topk(x, queries[qi], TOP_N, "euclidean", sqn_nc)
    )
    rows["brute_pca"] = time_queries(
        lambda qi: exact_topk(xp, qp[qi], TOP_N, "euclidean", sqn_pca)
    )
    rows["ann_nc"] = time_queries(
        lambda qi: index_nc.search(Descriptor(queries[qi]), TOP_N)
    )
    rows["ann_pca"] = time_queries(
        lambda qi: index_pca.search(Descriptor(qp[qi]), TOP_N)
    )
    return {
        "n_items": int(x.shape[0]),
        "dim": int(x.shape[1]),
        "pca_components": model.n_components,
        "queries": int(queries.shape[0] - warmup),
        "budget": budget,
        "rows": [
            {"name": name, "mean_ms": mean, "std_ms": std}
            for name, (mean, std) in rows.items()
        ],
    }
