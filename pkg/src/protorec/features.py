"""Descriptor extraction: Gaussian-weighted YCbCr color histograms from raw
rasters, and ingestion of externally computed embedding vectors.

The embedding exchange format is line-oriented: a JSON manifest header
followed by ``<external_id>\\t<class_synset>\\t<comma-separated floats>``
records.  Floats are written with ``repr`` so a write/read/write cycle is
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .vectors import (
    METRICS,
    ZERO_GUARD,
    Descriptor,
    DimensionMismatch,
    NonFinite,
    VectorError,
    l2_normalize,
)


class FeatureError(ValueError):
    """Base class for feature-extraction errors."""


class EmptyRoi(FeatureError):
    """Region of interest has zero width or height."""


class DegenerateImage(FeatureError):
    """No usable pixel weight inside the region of interest."""


@dataclass(frozen=True)
class RasterImage:
    """Row-major 8-bit RGB raster."""

    pixels: np.ndarray  # shape (height, width, 3), uint8

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] == 0 or px.shape[1] == 0:
            raise FeatureError("pixels must have shape (height, width, 3)")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @classmethod
    def from_bytes(cls, raw: bytes, width: int, height: int) -> "RasterImage":
        if len(raw) != width * height * 3:
            raise FeatureError(
                f"expected {width * height * 3} bytes of RGB data, got {len(raw)}"
            )
        return cls(np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3))


@dataclass(frozen=True)
class RegionOfInterest:
    """Rectangle (x, y, w, h) in pixel coordinates, top-left origin."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0 or self.w < 0 or self.h < 0:
            raise FeatureError("ROI coordinates and extents must be nonnegative")

    def check_within(self, img: RasterImage) -> None:
        if self.x + self.w > img.width or self.y + self.h > img.height:
            raise FeatureError("ROI extends outside the image")


@dataclass(frozen=True)
class EmbeddingManifest:
    """Declares the provenance, dimension, and metric of ingested vectors."""

    source_name: str
    dim: int
    metric: str = "euclidean"

    def __post_init__(self) -> None:
        if self.dim <= 0:
            raise FeatureError("manifest dim must be positive")
        if self.metric not in METRICS:
            raise FeatureError(f"unknown metric {self.metric!r}")


# ITU-R BT.601 full-range RGB -> YCbCr coefficients.
_YCBCR = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCBCR_OFFSET = np.array([0.0, 128.0, 128.0])


def rgb_to_ycbcr(r: int, g: int, b: int) -> tuple[int, int, int]:
    """Full-range BT.601 conversion, rounded to nearest and clamped to 8 bits."""
    for c in (r, g, b):
        if not 0 <= c <= 255:
            raise FeatureError("channel values must lie in [0, 255]")
    ycbcr = _YCBCR @ np.array([r, g, b], dtype=np.float64) + _YCBCR_OFFSET
    clamped = np.clip(np.floor(ycbcr + 0.5), 0, 255).astype(np.int64)
    return int(clamped[0]), int(clamped[1]), int(clamped[2])


def _ycbcr_planes(rgb: np.ndarray) -> np.ndarray:
    flat = rgb.reshape(-1, 3).astype(np.float64)
    ycbcr = flat @ _YCBCR.T + _YCBCR_OFFSET
    return np.clip(np.floor(ycbcr + 0.5), 0, 255).astype(np.uint8)


def ycbcr_histogram(
    img: RasterImage,
    roi: RegionOfInterest,
    bins_per_channel: int = 4,
    sigma_fraction: float = 0.25,
) -> Descriptor:
    """Gaussian-weighted YCbCr histogram of the ROI as a probability vector.

    Each pixel's contribution is weighted by a 2-d Gaussian centered on the
    ROI center with per-axis sigma ``sigma_fraction`` times the ROI extent,
    so colors near the center dominate and border colors are attenuated.
    """
    if bins_per_channel not in (4, 8):
        raise FeatureError("bins_per_channel must be 4 or 8")
    if sigma_fraction <= 0:
        raise FeatureError("sigma_fraction must be positive")
    if roi.w == 0 or roi.h == 0:
        raise EmptyRoi("ROI has zero extent")
    roi.check_within(img)

    crop = img.pixels[roi.y : roi.y + roi.h, roi.x : roi.x + roi.w]
    ycbcr = _ycbcr_planes(crop)
    bins = bins_per_channel
    idx = (ycbcr.astype(np.int64) * bins) // 256
    flat_idx = (idx[:, 0] * bins + idx[:, 1]) * bins + idx[:, 2]

    cols = np.arange(roi.w, dtype=np.float64) - (roi.w - 1) / 2.0
    rows = np.arange(roi.h, dtype=np.float64) - (roi.h - 1) / 2.0
    sigma_x = sigma_fraction * roi.w
    sigma_y = sigma_fraction * roi.h
    with np.errstate(divide="ignore"):  # vanishing sigma underflows to weight 0
        wx = np.exp(-(cols**2) / (2.0 * sigma_x**2))
        wy = np.exp(-(rows**2) / (2.0 * sigma_y**2))
    weights = np.outer(wy, wx).ravel()

    total = float(weights.sum())
    if total < ZERO_GUARD:
        raise DegenerateImage("total Gaussian weight vanished inside the ROI")
    hist = np.bincount(flat_idx, weights=weights, minlength=bins**3)
    return Descriptor(hist / total, metric="jensen-shannon")


def ingest_embedding(
    raw: Sequence[float] | np.ndarray,
    manifest: EmbeddingManifest,
    normalize: bool = True,
) -> Descriptor:
    """Validate an externally computed vector and wrap it as a Descriptor."""
    values = np.asarray(raw, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] != manifest.dim:
        raise DimensionMismatch(
            f"expected {manifest.dim} components, got {values.shape}"
        )
    if not np.all(np.isfinite(values)):
        raise NonFinite("embedding contains non-finite components")
    d = Descriptor(values, metric=manifest.metric)
    return l2_normalize(d) if normalize else d


EmbeddingRecord = tuple[str, str, np.ndarray]  # (external_id, class_synset, vector)


def write_embedding_file(
    path: str | Path,
    manifest: EmbeddingManifest,
    records: Iterable[EmbeddingRecord],
) -> None:
    header = json.dumps(
        {"source_name": manifest.source_name, "dim": manifest.dim, "metric": manifest.metric}
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for external_id, class_synset, vec in records:
            values = np.asarray(vec, dtype=np.float64)
            if values.shape[0] != manifest.dim:
                raise DimensionMismatch(
                    f"record {external_id!r} has {values.shape[0]} components"
                )
            floats = ",".join(repr(float(x)) for x in values)
            fh.write(f"{external_id}\t{class_synset}\t{floats}\n")


def read_embedding_file(path: str | Path) -> tuple[EmbeddingManifest, list[EmbeddingRecord]]:
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
            manifest = EmbeddingManifest(
                source_name=header["source_name"],
                dim=int(header["dim"]),
                metric=header["metric"],
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FeatureError(f"bad embedding manifest header: {exc}") from exc
        records: list[EmbeddingRecord] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FeatureError(f"line {lineno}: expected 3 tab-separated fields")
            vec = np.array([float(x) for x in parts[2].split(",")], dtype=np.float64)
            if vec.shape[0] != manifest.dim:
                raise DimensionMismatch(
                    f"line {lineno}: expected {manifest.dim} components, got {vec.shape[0]}"
                )
            records.append((parts[0], parts[1], vec))
    return manifest, records
