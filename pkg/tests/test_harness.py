import numpy as np
import pytest

from protorec import pca as pca_mod
from protorec import synth
from protorec.harness import (
    DatasetBundle,
    DatasetTooSmall,
    ExperimentConfig,
    HarnessError,
    accuracy_over_time,
    exact_topk,
    fusion_weight_sweep,
    kfold_accuracy,
    l2_rows,
    load_dataset,
    min_samples_sweep,
    save_dataset,
    stratified_folds,
    timing_benchmark,
)


def clusters_bundle(n_classes=8, per_class=30, dim=16, noise=0.15, seed=0):
    x, labels = synth.class_clusters(n_classes, per_class, dim, noise=noise, seed=seed)
    return DatasetBundle(x=x, labels=labels)


def test_config_validates():
    with pytest.raises(HarnessError):
        ExperimentConfig(folds=1)
    with pytest.raises(HarnessError):
        ExperimentConfig(index="ann")
    assert ExperimentConfig(index="ann:inf").index_budget() is None
    assert ExperimentConfig(index="ann:300").index_budget() == 300


def test_duplicate_vectors_give_perfect_top1(rng):
    base = rng.normal(0, 1, (6, 8))
    x = np.repeat(base, 10, axis=0)
    labels = [f"class_{i}" for i in range(6) for _ in range(10)]
    report = kfold_accuracy(ExperimentConfig(), DatasetBundle(x=x, labels=labels))
    assert report.mean_top1 == 1.0


def test_shuffled_labels_hit_chance_level():
    # 10 balanced classes with labels detached from geometry: ~10% top-1.
    accuracies = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = rng.normal(0, 1, (300, 12))
        labels = [f"class_{i % 10}" for i in range(300)]
        report = kfold_accuracy(
            ExperimentConfig(seed=seed), DatasetBundle(x=x, labels=labels)
        )
        accuracies.append(report.mean_top1)
    assert abs(float(np.mean(accuracies)) - 0.10) <= 0.03


def test_top10_contains_top1_accuracy():
    for seed in range(5):
        bundle = clusters_bundle(noise=0.8, seed=seed)
        report = kfold_accuracy(ExperimentConfig(seed=seed), bundle)
        for fold in report.folds:
            assert fold.top10 >= fold.top1


def test_fold_partitions_disjoint_covering_reproducible():
    labels = [f"class_{i % 7}" for i in range(140)]
    a = stratified_folds(labels, 5, seed=42)
    b = stratified_folds(labels, 5, seed=42)
    c = stratified_folds(labels, 5, seed=43)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.shape == (140,)
    assert set(a.tolist()) == {0, 1, 2, 3, 4}
    # stratification: each class spread across all folds
    for cls in set(labels):
        rows = [i for i, l in enumerate(labels) if l == cls]
        assert set(a[rows].tolist()) == {0, 1, 2, 3, 4}


def test_small_classes_stay_in_training(rng):
    x, labels = synth.class_clusters(3, [40, 40, 3], 8, seed=1)
    bundle = DatasetBundle(x=x, labels=labels)
    report = kfold_accuracy(ExperimentConfig(folds=5, seed=1), bundle)
    # 3-sample class contributes no queries: 80 queryable samples total
    assert sum(f.n_queries for f in report.folds) == 80


def test_ann_unbounded_equals_brute():
    bundle = clusters_bundle(noise=0.6, seed=3)
    brute = kfold_accuracy(ExperimentConfig(seed=3, index="brute"), bundle)
    ann = kfold_accuracy(
        ExperimentConfig(seed=3, index="ann:inf", n_trees=10), bundle
    )
    assert brute.mean_top1 == ann.mean_top1
    assert brute.mean_top10 == ann.mean_top10


def test_pca_fitted_per_training_fold(rng):
    # Leak-free oracle: recompute each fold's expected component count from
    # its training rows only and compare with what the harness reports.
    bundle = clusters_bundle(n_classes=5, per_class=20, dim=12, noise=0.4, seed=4)
    cfg = ExperimentConfig(seed=4, pca=True, pca_threshold=0.9)
    report = kfold_accuracy(cfg, bundle)
    fold_of = stratified_folds(bundle.labels, cfg.folds, cfg.seed)
    labels = np.asarray(bundle.labels)
    classes, counts = np.unique(labels, return_counts=True)
    count_of = dict(zip(classes.tolist(), counts.tolist()))
    queryable = np.array([count_of[l] >= cfg.folds for l in bundle.labels])
    for fold in report.folds:
        train_rows = np.nonzero((fold_of != fold.fold) | ~queryable)[0]
        expected = pca_mod.fit(l2_rows(bundle.x[train_rows]), 0.9).n_components
        assert fold.pca_components == expected


def test_requires_two_classes(rng):
    x = rng.normal(0, 1, (30, 4))
    with pytest.raises(DatasetTooSmall):
        kfold_accuracy(ExperimentConfig(), DatasetBundle(x=x, labels=["only"] * 30))


def test_dataset_save_load_round_trip(tmp_path, rng):
    x, labels = synth.class_clusters(4, 10, 6, seed=5)
    ts = np.arange(40, dtype=np.float64)
    bundle = DatasetBundle(x=x, labels=labels, timestamps=ts)
    out = save_dataset(tmp_path / "ds", bundle)
    loaded = load_dataset(out)
    assert np.array_equal(loaded.x, bundle.x)
    assert loaded.labels == bundle.labels
    assert np.array_equal(loaded.timestamps, ts)
    # a bare embedding file also loads
    bare = load_dataset(out / "descriptors.tsv")
    assert np.array_equal(bare.x, bundle.x)
    assert bare.timestamps is None


def test_over_time_constant_generator_is_flat():
    x, labels, ts = synth.drifting_clusters(
        10, 1500, 24, noise_start=1.2, noise_growth=0.0, seed=7
    )
    points = accuracy_over_time(
        DatasetBundle(x=x, labels=labels, timestamps=ts), step=300
    )
    assert [p["n"] for p in points] == [300, 600, 900, 1200, 1500]
    settled = [p["top1"] for p in points[1:]]  # after burn-in
    assert max(settled) - min(settled) <= 0.05
    assert all(p["classes"] == 10 for p in points)


def test_over_time_degrading_generator_decreases_more():
    constant = accuracy_over_time(
        DatasetBundle(
            *synth.drifting_clusters(10, 1500, 24, noise_start=0.45, noise_growth=0.0, seed=7)[:2],
            timestamps=np.arange(1500, dtype=float),
        ),
        step=300,
    )
    degrading = accuracy_over_time(
        DatasetBundle(
            *synth.drifting_clusters(10, 1500, 24, noise_start=0.45, noise_growth=6.0, seed=7)[:2],
            timestamps=np.arange(1500, dtype=float),
        ),
        step=300,
    )
    drop_constant = constant[0]["top1"] - constant[-1]["top1"]
    drop_degrading = degrading[0]["top1"] - degrading[-1]["top1"]
    assert drop_degrading > drop_constant + 0.05


def test_over_time_needs_timestamps_and_two_samples(rng):
    with pytest.raises(HarnessError):
        accuracy_over_time(DatasetBundle(x=rng.normal(0, 1, (5, 3)), labels=["a"] * 5))
    tiny = DatasetBundle(
        x=rng.normal(0, 1, (1, 3)), labels=["a"], timestamps=np.zeros(1)
    )
    with pytest.raises(DatasetTooSmall):
        accuracy_over_time(tiny, step=1)


def test_over_time_skips_single_sample_prefix(rng):
    bundle = DatasetBundle(
        x=rng.normal(0, 1, (10, 3)),
        labels=[f"c{i % 2}" for i in range(10)],
        timestamps=np.arange(10, dtype=float),
    )
    points = accuracy_over_time(bundle, step=1)
    assert [p["n"] for p in points][0] == 2  # prefix of one is undefined


def test_min_samples_one_equals_plain_kfold():
    bundle = clusters_bundle(seed=8, noise=0.7)
    cfg = ExperimentConfig(seed=8)
    sweep = min_samples_sweep(cfg, 1, 3, bundle)
    plain = kfold_accuracy(cfg, bundle)
    assert sweep[0]["top1"] == pytest.approx(plain.mean_top1)


def test_min_samples_above_largest_class_reports_gap(rng):
    x, labels = synth.class_clusters(3, 10, 6, seed=9)
    sweep = min_samples_sweep(ExperimentConfig(seed=9), 9, 12, DatasetBundle(x=x, labels=labels))
    assert sweep[0]["top1"] is not None  # m=9,10 still fine
    assert sweep[-1]["top1"] is None  # m=12 exceeds every class size
    assert sweep[-1]["classes"] == 0


def test_min_samples_curve_nondecreasing_on_sized_clusters():
    sizes = list(range(2, 42, 4))
    x, labels = synth.class_clusters(len(sizes), sizes, 16, noise=0.9, seed=10)
    sweep = min_samples_sweep(
        ExperimentConfig(seed=10), 1, 40, DatasetBundle(x=x, labels=labels)
    )
    values = [p["top1"] for p in sweep if p["top1"] is not None]
    for earlier, later in zip(values, values[1:]):
        assert later >= earlier - 0.03  # nondecreasing within noise


def test_fusion_sweep_interior_weight_wins():
    x1, h2, labels = synth.fusion_channels(
        8, 40, dim=24, bins=16, vector_noise=0.35, histogram_noise=0.05, seed=5
    )
    sweep = fusion_weight_sweep(x1, h2, labels, [i / 10 for i in range(11)], seed=5)
    color_only = sweep[0]["top1"]
    vector_only = sweep[-1]["top1"]
    interior = max(p["top1"] for p in sweep[1:-1])
    assert interior > color_only
    assert interior > vector_only


def test_exact_topk_matches_naive(rng):
    x = rng.normal(0, 1, (100, 8))
    q = rng.normal(0, 1, 8)
    idx, dists = exact_topk(x, q, 10, "euclidean")
    naive = np.linalg.norm(x - q, axis=1)
    order = np.lexsort((np.arange(100), naive))[:10]
    assert np.array_equal(idx, order)
    assert np.allclose(dists, naive[order], atol=1e-9)


def test_timing_benchmark_stability(rng):
    x, _ = synth.class_clusters(10, 150, 32, seed=11)
    queries = rng.normal(0, 1, (120, 32)) + x[rng.choice(x.shape[0], 120)]
    a = timing_benchmark(x, queries, n_trees=10, warmup=20, seed=11)
    b = timing_benchmark(x, queries, n_trees=10, warmup=20, seed=11)
    for row_a, row_b in zip(a["rows"], b["rows"]):
        spread = 3 * max(row_a["std_ms"], row_b["std_ms"])
        assert abs(row_a["mean_ms"] - row_b["mean_ms"]) <= max(spread, 0.5)
    assert {r["name"] for r in a["rows"]} == {"brute_nc", "brute_pca", "ann_nc", "ann_pca"}
