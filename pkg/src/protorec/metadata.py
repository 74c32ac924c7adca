"""Capture-context metadata: schema-driven [0,1]/one-hot encoding, a
metadata-only kNN classifier at three hierarchy levels, per-class feature-code
histograms, and the low-confidence two-way reranker.

One-hot blocks are scaled by 1/sqrt(2) so two records that disagree on a
categorical attribute differ by exactly 1 in squared Euclidean distance,
giving the 0/1 mismatch semantics inside a single metric.  Missing numerics
impute a supplied per-attribute mean (range midpoint as fallback); missing
categoricals map to the explicit ``unknown`` slot.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ontology import Taxonomy

MetadataRecord = Mapping[str, object]

FeatureCodeHistograms = dict[str, dict[str, float]]

UNKNOWN = "unknown"

DEFAULT_KNN_K = 80
DEFAULT_RERANK_GAP = 0.02

_ONE_HOT_SCALE = 1.0 / math.sqrt(2.0)

LEVELS = ("root", "second", "leaf")


class MetadataError(ValueError):
    """Base class for metadata errors."""


class OutOfRange(MetadataError):
    """Numeric value outside its declared raw range."""


class UnknownCategory(MetadataError):
    """Categorical value outside the schema's domain."""


class EmptyTrainingSet(MetadataError):
    """Classifier called with no training samples."""


@dataclass(frozen=True)
class NumericAttribute:
    name: str
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise MetadataError(f"{self.name}: need lo < hi")


@dataclass(frozen=True)
class CategoricalAttribute:
    name: str
    domain: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.domain:
            raise MetadataError(f"{self.name}: empty categorical domain")
        if UNKNOWN in self.domain:
            raise MetadataError(f"{self.name}: 'unknown' slot is implicit")


@dataclass(frozen=True)
class MetadataSchema:
    numeric: tuple[NumericAttribute, ...]
    categorical: tuple[CategoricalAttribute, ...]

    @property
    def encoded_length(self) -> int:
        return len(self.numeric) + sum(len(c.domain) + 1 for c in self.categorical)

    @classmethod
    def from_json(cls, path: str | Path) -> "MetadataSchema":
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
        numeric = tuple(
            NumericAttribute(a["name"], float(a["lo"]), float(a["hi"]))
            for a in spec["numeric"]
        )
        categorical = tuple(
            CategoricalAttribute(a["name"], tuple(a["domain"]))
            for a in spec["categorical"]
        )
        return cls(numeric, categorical)


def default_schema_path() -> Path:
    return Path(__file__).parent / "data" / "metadata_schema.json"


def load_default_schema() -> MetadataSchema:
    return MetadataSchema.from_json(default_schema_path())


def numeric_means(records: Iterable[MetadataRecord], schema: MetadataSchema) -> dict[str, float]:
    """Per-attribute raw means over present values, for imputation."""
    sums: dict[str, float] = defaultdict(float)
    counts: dict[str, int] = defaultdict(int)
    for record in records:
        for attr in schema.numeric:
            value = record.get(attr.name)
            if value is not None:
                sums[attr.name] += float(value)  # type: ignore[arg-type]
                counts[attr.name] += 1
    return {name: sums[name] / counts[name] for name in counts}


def encode_metadata(
    record: MetadataRecord,
    schema: MetadataSchema,
    impute: Mapping[str, float] | None = None,
) -> np.ndarray:
    """Fixed-length vector: normalized numerics then scaled one-hot blocks."""
    out = np.zeros(schema.encoded_length, dtype=np.float64)
    pos = 0
    for attr in schema.numeric:
        value = record.get(attr.name)
        if value is None and impute is not None and attr.name in impute:
            value = impute[attr.name]
        if value is None:
            out[pos] = 0.5
        else:
            v = float(value)  # type: ignore[arg-type]
            if not attr.lo <= v <= attr.hi:
                raise OutOfRange(f"{attr.name}={v} outside [{attr.lo}, {attr.hi}]")
            out[pos] = (v - attr.lo) / (attr.hi - attr.lo)
        pos += 1
    for attr in schema.categorical:
        value = record.get(attr.name)
        if value is None:
            slot = len(attr.domain)  # unknown
        else:
            value = str(value)
            if value == UNKNOWN:
                slot = len(attr.domain)
            elif value in attr.domain:
                slot = attr.domain.index(value)
            else:
                raise UnknownCategory(f"{attr.name}={value!r} not in schema domain")
        out[pos + slot] = _ONE_HOT_SCALE
        pos += len(attr.domain) + 1
    return out


def map_class_to_level(
    synset_id: str,
    level: str,
    taxonomy: Taxonomy,
    split_objects: bool = False,
) -> str:
    """Class label at the requested hierarchy level.

    ``split_objects`` widens the root level for synsets under the merged
    ``objects`` root to their second-level ancestor, yielding the five-way
    grouping (man-made vs natural objects) used by some evaluations.
    """
    if level not in LEVELS:
        raise MetadataError(f"unknown level {level!r}")
    if level == "leaf":
        return synset_id
    if level == "second":
        return taxonomy.ancestor_at_depth(synset_id, 2)
    root = taxonomy.ancestor_at_depth(synset_id, 1)
    if split_objects and taxonomy.get(synset_id).root_category == "objects":
        return taxonomy.ancestor_at_depth(synset_id, 2)
    return root


def metadata_knn_classify(
    q: np.ndarray,
    train_vectors: np.ndarray,
    train_classes: Sequence[str],
    k: int = DEFAULT_KNN_K,
    level: str = "leaf",
    taxonomy: Taxonomy | None = None,
    split_objects: bool = False,
) -> str:
    """Majority class among the k nearest encoded records.

    Ties break by smaller mean distance within the k set, then by
    lexicographic class id.
    """
    train_vectors = np.asarray(train_vectors, dtype=np.float64)
    if train_vectors.ndim != 2 or train_vectors.shape[0] == 0:
        raise EmptyTrainingSet("no training records")
    if len(train_classes) != train_vectors.shape[0]:
        raise MetadataError("labels and vectors disagree in length")
    if level != "leaf" and taxonomy is None:
        raise MetadataError("root/second level mapping requires a taxonomy")

    if level == "leaf":
        mapped = list(train_classes)
    else:
        assert taxonomy is not None
        mapped = [
            map_class_to_level(c, level, taxonomy, split_objects) for c in train_classes
        ]

    diff = train_vectors - np.asarray(q, dtype=np.float64)
    dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    k_eff = min(k, dists.shape[0])
    order = np.lexsort((np.arange(dists.shape[0]), dists))[:k_eff]

    votes: Counter[str] = Counter(mapped[i] for i in order)
    top_count = max(votes.values())
    contenders = [c for c, n in votes.items() if n == top_count]
    if len(contenders) == 1:
        return contenders[0]
    mean_dist = {
        c: float(np.mean([dists[i] for i in order if mapped[i] == c])) for c in contenders
    }
    best = min(mean_dist.values())
    return min(c for c, m in mean_dist.items() if m == best)


def build_feature_code_histograms(
    train: Iterable[tuple[str, str]],
) -> FeatureCodeHistograms:
    """Relative frequency of feature codes per class."""
    counts: dict[str, Counter[str]] = defaultdict(Counter)
    for class_synset, code in train:
        counts[class_synset][code] += 1
    histograms: FeatureCodeHistograms = {}
    for class_synset, counter in counts.items():
        total = sum(counter.values())
        histograms[class_synset] = {c: n / total for c, n in counter.items()}
    return histograms


def rerank_with_feature_code(
    ranked: Sequence[tuple[str, float]],
    query_code: str | None,
    histograms: FeatureCodeHistograms,
    gap_threshold: float = DEFAULT_RERANK_GAP,
) -> list[tuple[str, float]]:
    """Swap the two top classes when the classifier margin is below the gap
    threshold and the runner-up's class sees the query's feature code more
    often. Positions beyond the first two never change."""
    if gap_threshold < 0:
        raise MetadataError("gap threshold must be nonnegative")
    result = list(ranked)
    if len(result) < 2 or query_code is None:
        return result
    (first_class, d1), (second_class, d2) = result[0], result[1]
    if d2 - d1 < gap_threshold:
        first_weight = histograms.get(first_class, {}).get(query_code, 0.0)
        second_weight = histograms.get(second_class, {}).get(query_code, 0.0)
        if second_weight > first_weight:
            result[0], result[1] = result[1], result[0]
    return result
