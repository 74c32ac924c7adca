"""SVD-based PCA with automatic component selection by explained variance.

The model keeps every computable component (at most ``min(m - 1, d)`` after
mean centering); ``n_components`` marks the smallest prefix whose cumulative
explained-variance ratio exceeds the threshold, and ``transform`` projects
onto that prefix.  Component signs are fixed so the largest-magnitude entry
of each axis is positive, making fits reproducible.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .snapio import read_blob, write_blob
from .vectors import Descriptor, DimensionMismatch

_SNAPSHOT_MAGIC = b"PCAM"
_SNAPSHOT_VERSION = 1


class PcaError(ValueError):
    """Base class for PCA errors."""


class TooFewSamples(PcaError):
    """Fitting needs at least two samples."""


class DegenerateData(PcaError):
    """All rows identical; there is no variance to decompose."""


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # all computed axes, orthonormal rows
    explained_variance_ratio: np.ndarray
    n_components: int
    threshold: float

    @property
    def input_dim(self) -> int:
        return int(self.mean.shape[0])


def fit(data: np.ndarray, variance_threshold: float = 0.95) -> PcaModel:
    """Mean-centered full SVD; keep components per the variance threshold."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise PcaError("data must be a 2-d matrix")
    m, d = x.shape
    if m < 2:
        raise TooFewSamples(f"need at least 2 samples, got {m}")
    if not 0.0 < variance_threshold <= 1.0:
        raise PcaError("variance threshold must lie in (0, 1]")

    mean = x.mean(axis=0)
    centered = x - mean
    if not centered.any():
        raise DegenerateData("all rows identical; nothing to decompose")

    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    r = min(m - 1, d)
    s = s[:r]
    components = vt[:r].copy()
    variances = s**2
    ratios = variances / variances.sum()

    for i in range(r):
        anchor = int(np.argmax(np.abs(components[i])))
        if components[i, anchor] < 0:
            components[i] = -components[i]

    cumulative = np.cumsum(ratios)
    above = np.nonzero(cumulative > variance_threshold)[0]
    n_components = int(above[0]) + 1 if above.size else r

    return PcaModel(
        mean=mean,
        components=components,
        explained_variance_ratio=ratios,
        n_components=n_components,
        threshold=variance_threshold,
    )


def transform(v: Descriptor, model: PcaModel) -> Descriptor:
    """Project one descriptor onto the retained principal axes."""
    if v.dim != model.input_dim:
        raise DimensionMismatch(f"expected dim {model.input_dim}, got {v.dim}")
    coords = model.components[: model.n_components] @ (v.values - model.mean)
    return Descriptor(coords, metric="euclidean")


def transform_matrix(x: np.ndarray, model: PcaModel) -> np.ndarray:
    """Project rows of ``x`` onto the retained principal axes."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != model.input_dim:
        raise DimensionMismatch(f"expected dim {model.input_dim}, got {x.shape[1]}")
    return (x - model.mean) @ model.components[: model.n_components].T


def explained_dimensionality(model: PcaModel) -> int:
    return model.n_components


def save_model(model: PcaModel, path: str) -> None:
    buf = io.BytesIO()
    r, d = model.components.shape
    buf.write(struct.pack("<IIId", d, r, model.n_components, model.threshold))
    buf.write(model.mean.astype(np.float64).tobytes())
    buf.write(model.components.astype(np.float64).tobytes())
    buf.write(model.explained_variance_ratio.astype(np.float64).tobytes())
    write_blob(path, _SNAPSHOT_MAGIC, _SNAPSHOT_VERSION, buf.getvalue())


def load_model(path: str) -> PcaModel:
    payload = read_blob(path, _SNAPSHOT_MAGIC, _SNAPSHOT_VERSION)
    head = struct.Struct("<IIId")
    d, r, n_components, threshold = head.unpack_from(payload, 0)
    pos = head.size
    mean = np.frombuffer(payload, dtype=np.float64, count=d, offset=pos).copy()
    pos += d * 8
    components = (
        np.frombuffer(payload, dtype=np.float64, count=r * d, offset=pos)
        .reshape(r, d)
        .copy()
    )
    pos += r * d * 8
    ratios = np.frombuffer(payload, dtype=np.float64, count=r, offset=pos).copy()
    return PcaModel(
        mean=mean,
        components=components,
        explained_variance_ratio=ratios,
        n_components=n_components,
        threshold=threshold,
    )
