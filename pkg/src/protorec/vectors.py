"""Descriptor vectors, the three similarity metrics, and weighted distance fusion.

Tolerance constants defined here are shared by the whole repository:
``TOL_INVARIANT`` for data invariants, ``TOL_PROPERTY`` for numeric property
checks, ``ZERO_GUARD`` for degenerate-vector detection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TOL_INVARIANT = 1e-6
TOL_PROPERTY = 1e-9
ZERO_GUARD = 1e-12

METRICS = ("euclidean", "cosine", "jensen-shannon")

DEFAULT_FUSION_WEIGHT = 0.1


class VectorError(ValueError):
    """Base class for descriptor-level errors."""


class ZeroVector(VectorError):
    """Degenerate all-zero vector where a direction is required."""


class DimensionMismatch(VectorError):
    """Operands do not share a dimension."""


class MetricMismatch(VectorError):
    """Operands do not share a metric."""


class NonFinite(VectorError):
    """Vector contains NaN or infinity."""


@dataclass(frozen=True)
class Descriptor:
    """A fixed-dimension real vector plus the metric used to compare it.

    ``normalized`` records that the values have unit Euclidean norm.  For the
    ``jensen-shannon`` metric the values must form a probability histogram.
    """

    values: np.ndarray
    metric: str = "euclidean"
    normalized: bool = False

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise VectorError("descriptor values must be a nonempty 1-d vector")
        if not np.all(np.isfinite(values)):
            raise NonFinite("descriptor contains non-finite values")
        if self.metric not in METRICS:
            raise MetricMismatch(f"unknown metric {self.metric!r}")
        if self.normalized and abs(float(np.linalg.norm(values)) - 1.0) > TOL_INVARIANT:
            raise VectorError("normalized flag set but vector is not unit length")
        if self.metric == "jensen-shannon":
            if np.any(values < 0):
                raise VectorError("jensen-shannon descriptors must be nonnegative")
            if abs(float(values.sum()) - 1.0) > TOL_INVARIANT:
                raise VectorError("jensen-shannon descriptors must sum to 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def l2_normalize(v: Descriptor) -> Descriptor:
    """Rescale ``v`` to unit Euclidean norm, preserving direction."""
    norm = float(np.linalg.norm(v.values))
    if norm < ZERO_GUARD:
        raise ZeroVector("cannot normalize a (near-)zero vector")
    return Descriptor(v.values / norm, metric=v.metric, normalized=True)


def _check_pair(a: Descriptor, b: Descriptor) -> None:
    if a.dim != b.dim:
        raise DimensionMismatch(f"dims differ: {a.dim} vs {b.dim}")
    if a.metric != b.metric:
        raise MetricMismatch(f"metrics differ: {a.metric} vs {b.metric}")


def _jsd(p: np.ndarray, q: np.ndarray) -> float:
    # Base-2 Jensen-Shannon divergence; 0*log(0/x) terms are defined as 0.
    m = 0.5 * (p + q)

    def half_kl(x: np.ndarray) -> float:
        mask = x > 0
        return float(np.sum(x[mask] * np.log2(x[mask] / m[mask])))

    value = 0.5 * (half_kl(p) + half_kl(q))
    return min(1.0, max(0.0, value))


def distance(a: Descriptor, b: Descriptor) -> float:
    """Distance between two descriptors under their shared metric.

    euclidean -> ||a - b||_2, cosine -> 1 - cos(a, b),
    jensen-shannon -> base-2 JSD in [0, 1].
    """
    _check_pair(a, b)
    if a.metric == "euclidean":
        return float(np.linalg.norm(a.values - b.values))
    if a.metric == "cosine":
        na = float(np.linalg.norm(a.values))
        nb = float(np.linalg.norm(b.values))
        if na < ZERO_GUARD or nb < ZERO_GUARD:
            raise ZeroVector("cosine distance undefined for zero vectors")
        return max(0.0, 1.0 - float(np.dot(a.values, b.values)) / (na * nb))
    return _jsd(a.values, b.values)


def distances_to(matrix: np.ndarray, q: np.ndarray, metric: str) -> np.ndarray:
    """Vectorized ``distance`` of one query against every row of ``matrix``."""
    if matrix.ndim != 2 or matrix.shape[1] != q.shape[0]:
        raise DimensionMismatch(
            f"matrix columns {matrix.shape[-1]} vs query dim {q.shape[0]}"
        )
    if metric == "euclidean":
        diff = matrix - q
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if metric == "cosine":
        qn = np.linalg.norm(q)
        rn = np.linalg.norm(matrix, axis=1)
        if qn < ZERO_GUARD or np.any(rn < ZERO_GUARD):
            raise ZeroVector("cosine distance undefined for zero vectors")
        return np.maximum(0.0, 1.0 - (matrix @ q) / (rn * qn))
    if metric == "jensen-shannon":
        m = 0.5 * (matrix + q)
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(matrix > 0, matrix * np.log2(matrix / m), 0.0)
            right = np.where(q > 0, q * np.log2(q / m), 0.0)
        return np.clip(0.5 * (left.sum(axis=1) + right.sum(axis=1)), 0.0, 1.0)
    raise MetricMismatch(f"unknown metric {metric!r}")


def fuse_distance(d_t: float, d_c: float, w: float = DEFAULT_FUSION_WEIGHT) -> float:
    """Convex combination of two pre-scaled distances: w*d_t + (1-w)*d_c."""
    if not 0.0 <= w <= 1.0:
        raise VectorError(f"fusion weight must lie in [0, 1], got {w}")
    if d_t < 0 or d_c < 0:
        raise VectorError("distances must be nonnegative")
    return w * d_t + (1.0 - w) * d_c
