"""Seed-deterministic synthetic corpora standing in for a real photo dataset:
Gaussian class clusters with controllable spread, imbalance, norm confounds,
temporal drift, complementary descriptor channels, and class-correlated
feature codes.
"""

from __future__ import annotations

import numpy as np


def _class_labels(n_classes: int, sizes: np.ndarray) -> list[str]:
    labels: list[str] = []
    for c in range(n_classes):
        labels.extend([f"class_{c:03d}"] * int(sizes[c]))
    return labels


def _sizes(n_classes: int, per_class) -> np.ndarray:
    if np.isscalar(per_class):
        return np.full(n_classes, int(per_class), dtype=np.int64)
    sizes = np.asarray(per_class, dtype=np.int64)
    if sizes.shape[0] != n_classes:
        raise ValueError("per_class sequence must have one entry per class")
    return sizes


def class_clusters(
    n_classes: int,
    per_class,
    dim: int,
    spread: float = 1.0,
    noise: float = 0.15,
    seed: int = 0,
) -> tuple[np.ndarray, list[str]]:
    """Isotropic Gaussian blobs, one per class."""
    rng = np.random.default_rng(seed)
    sizes = _sizes(n_classes, per_class)
    centers = rng.normal(0.0, spread, size=(n_classes, dim))
    rows = [
        centers[c] + rng.normal(0.0, noise, size=(int(sizes[c]), dim))
        for c in range(n_classes)
    ]
    return np.concatenate(rows), _class_labels(n_classes, sizes)


def norm_confounded_clusters(
    n_classes: int,
    per_class,
    dim: int,
    noise: float = 0.1,
    norm_low: float = 0.5,
    norm_high: float = 5.0,
    seed: int = 0,
) -> tuple[np.ndarray, list[str]]:
    """Class information lives in the direction; vector norms vary wildly.

    Raw Euclidean comparisons are dominated by the norm noise; unit
    normalization recovers the class structure.
    """
    rng = np.random.default_rng(seed)
    sizes = _sizes(n_classes, per_class)
    centers = rng.normal(0.0, 1.0, size=(n_classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    rows = []
    for c in range(n_classes):
        directions = centers[c] + rng.normal(0.0, noise, size=(int(sizes[c]), dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        scales = rng.uniform(norm_low, norm_high, size=(int(sizes[c]), 1))
        rows.append(directions * scales)
    return np.concatenate(rows), _class_labels(n_classes, sizes)


def fusion_channels(
    n_classes: int,
    per_class,
    dim: int = 32,
    bins: int = 16,
    vector_noise: float = 0.25,
    histogram_noise: float = 0.04,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Two complementary channels: each alone collapses different class pairs.

    Channel 1 (a real vector) shares a center between classes (2c, 2c+1);
    channel 2 (a probability histogram) shares a base distribution between
    the shifted pairs (2c+1, 2c+2).  Only the combination separates all
    classes.  Requires an even ``n_classes`` of at least 4.
    """
    if n_classes < 4 or n_classes % 2:
        raise ValueError("fusion_channels needs an even n_classes >= 4")
    rng = np.random.default_rng(seed)
    sizes = _sizes(n_classes, per_class)
    centers1 = rng.normal(0.0, 1.0, size=(n_classes // 2, dim))
    bases2 = rng.dirichlet(np.full(bins, 0.6), size=n_classes // 2)
    x1_rows, h2_rows = [], []
    for c in range(n_classes):
        g1 = c // 2
        g2 = ((c + 1) % n_classes) // 2
        n = int(sizes[c])
        x1_rows.append(centers1[g1] + rng.normal(0.0, vector_noise, size=(n, dim)))
        hist = bases2[g2] + np.abs(rng.normal(0.0, histogram_noise, size=(n, bins)))
        h2_rows.append(hist / hist.sum(axis=1, keepdims=True))
    return np.concatenate(x1_rows), np.concatenate(h2_rows), _class_labels(n_classes, sizes)


def drifting_clusters(
    n_classes: int,
    n_samples: int,
    dim: int,
    noise_start: float = 0.1,
    noise_growth: float = 0.0,
    spread: float = 1.0,
    seed: int = 0,
) -> tuple[np.ndarray, list[str], np.ndarray]:
    """Time-ordered stream whose per-sample noise grows with arrival index.

    ``noise_growth=0`` yields a constant-quality stream; positive values
    degrade feature quality over time.  Timestamps are the arrival indices.
    """
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, spread, size=(n_classes, dim))
    assignments = rng.integers(0, n_classes, size=n_samples)
    scale = noise_start * (1.0 + noise_growth * np.arange(n_samples) / max(1, n_samples - 1))
    x = centers[assignments] + rng.normal(0.0, 1.0, size=(n_samples, dim)) * scale[:, None]
    labels = [f"class_{c:03d}" for c in assignments]
    timestamps = np.arange(n_samples, dtype=np.float64)
    return x, labels, timestamps


def confusable_pair_clusters(
    n_pairs: int,
    per_class,
    dim: int = 32,
    noise: float = 0.12,
    seed: int = 0,
) -> tuple[np.ndarray, list[str]]:
    """Pairs of classes sharing one visual center, so the vector channel
    cannot tell pair members apart and top-2 margins stay small."""
    rng = np.random.default_rng(seed)
    n_classes = 2 * n_pairs
    sizes = _sizes(n_classes, per_class)
    centers = rng.normal(0.0, 1.0, size=(n_pairs, dim))
    rows = [
        centers[c // 2] + rng.normal(0.0, noise, size=(int(sizes[c]), dim))
        for c in range(n_classes)
    ]
    return np.concatenate(rows), _class_labels(n_classes, sizes)


def class_coded_records(
    labels: list[str],
    codes: list[str],
    fidelity: float = 0.85,
    seed: int = 0,
) -> list[dict]:
    """Metadata records whose feature code usually matches a per-class home
    code; with probability ``1 - fidelity`` a different code is drawn."""
    rng = np.random.default_rng(seed)
    classes = sorted(set(labels))
    home = {c: codes[i % len(codes)] for i, c in enumerate(classes)}
    records = []
    for label in labels:
        if rng.random() < fidelity:
            code = home[label]
        else:
            other = [c for c in codes if c != home[label]]
            code = other[int(rng.integers(0, len(other)))]
        records.append({"gis_feature_code": code})
    return records
