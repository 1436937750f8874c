"""Feature extraction and feature-space operations.

Two extractor kinds exist. The baseline turns any raster into a 1024-dim
zero-mean unit vector of downscaled pixels, so the whole pipeline runs with
no model dependency. The external kind looks vectors up in a precomputed
store keyed by provenance id, letting a real embedding network be swapped in
without touching the pipeline.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FacepoolError, FeatureVector, PooledTemplate, to_gray

__all__ = [
    "EmbeddingError",
    "ZeroVarianceImage",
    "ZeroVariance",
    "MixedExtractors",
    "EmptySequence",
    "MissingExternalFeature",
    "PixelExtractor",
    "ExternalExtractor",
    "extract",
    "pool_features",
    "ncc",
    "embed_pooled",
    "area_resize",
    "write_feature_store",
    "read_feature_store",
    "FPF1_MAGIC",
]

FPF1_MAGIC = b"FPF1"
_NORM_EPS = 1e-12


class EmbeddingError(FacepoolError):
    pass


class ZeroVarianceImage(EmbeddingError):
    """A constant raster has no direction after mean subtraction."""


class ZeroVariance(EmbeddingError):
    """A constant vector has no correlation with anything."""


class MixedExtractors(EmbeddingError):
    """Features from different extractors cannot be combined."""


class EmptySequence(EmbeddingError):
    pass


class MissingExternalFeature(EmbeddingError):
    """The external store has no row for the requested provenance id."""


def area_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Exact area-weighted downscale (or upscale) of a 2D raster.

    Each output cell averages the source pixels its footprint overlaps,
    weighted by overlap area. Deterministic, no library resampling quirks.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("area_resize expects a 2D raster")

    def weights(n_in: int, n_out: int) -> np.ndarray:
        edges = np.linspace(0.0, n_in, n_out + 1)
        W = np.zeros((n_out, n_in))
        for o in range(n_out):
            a, b = edges[o], edges[o + 1]
            i0 = int(np.floor(a))
            i1 = min(int(np.ceil(b)), n_in)
            for i in range(i0, i1):
                W[o, i] = min(b, i + 1.0) - max(a, float(i))
        return W / (n_in / n_out)

    return weights(img.shape[0], out_h) @ img @ weights(img.shape[1], out_w).T


class PixelExtractor:
    """Baseline: 32x32 area-averaged grayscale pixels, centered, unit norm."""

    kind = "baseline_pixels"
    side = 32

    def __init__(self):
        self.extractor_id = f"pixels{self.side}"
        self.dim = self.side * self.side

    def extract(self, raster: np.ndarray, provenance_id: str | None = None) -> FeatureVector:
        gray = to_gray(np.asarray(raster, dtype=np.float64))
        small = area_resize(gray, self.side, self.side).ravel()
        small -= small.mean()
        norm = float(np.linalg.norm(small))
        if norm < _NORM_EPS:
            raise ZeroVarianceImage("raster is constant, no feature direction")
        return FeatureVector(values=(small / norm).astype(np.float32), extractor_id=self.extractor_id)


class ExternalExtractor:
    """Lookup of precomputed vectors by provenance id (media or entry id)."""

    kind = "external_lookup"

    def __init__(self, table: dict[str, np.ndarray], extractor_id: str):
        if not table:
            raise EmptySequence("external feature store is empty")
        dims = {v.shape[0] for v in table.values()}
        if len(dims) != 1:
            raise ValueError(f"store rows disagree in dimension: {sorted(dims)}")
        self.dim = dims.pop()
        self.extractor_id = extractor_id
        self._table = {k: np.asarray(v, dtype=np.float32) for k, v in table.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "ExternalExtractor":
        ids, matrix = read_feature_store(path)
        table = {pid: matrix[i] for i, pid in enumerate(ids)}
        return cls(table, extractor_id=f"external:{Path(path).name}")

    def extract(self, raster: np.ndarray | None, provenance_id: str | None = None) -> FeatureVector:
        if provenance_id is None or provenance_id not in self._table:
            raise MissingExternalFeature(f"no stored feature for {provenance_id!r}")
        return FeatureVector(values=self._table[provenance_id], extractor_id=self.extractor_id)


def extract(raster: np.ndarray | None, extractor, provenance_id: str | None = None) -> FeatureVector:
    """Run one extractor on one raster (or id, for external lookup)."""
    return extractor.extract(raster, provenance_id=provenance_id)


def pool_features(features) -> FeatureVector:
    """Average unit feature vectors and renormalize.

    All inputs must share one extractor. The mean is accumulated in float64;
    a zero-length input raises EmptySequence and an exactly cancelling set of
    vectors raises ZeroVariance.
    """
    feats = list(features)
    if not feats:
        raise EmptySequence("no features to pool")
    ids = {f.extractor_id for f in feats}
    if len(ids) != 1:
        raise MixedExtractors(f"cannot pool features from {sorted(ids)}")
    dims = {f.dim for f in feats}
    if len(dims) != 1:
        raise MixedExtractors(f"feature dimensions disagree: {sorted(dims)}")
    mean = np.mean([f.values.astype(np.float64) for f in feats], axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < _NORM_EPS:
        raise ZeroVariance("pooled feature cancelled to the zero vector")
    return FeatureVector(values=(mean / norm).astype(np.float32), extractor_id=feats[0].extractor_id)


def ncc(x: FeatureVector, y: FeatureVector) -> float:
    """Pearson correlation of two feature vectors, clipped to [-1, 1]."""
    if x.extractor_id != y.extractor_id:
        raise MixedExtractors(f"{x.extractor_id} vs {y.extractor_id}")
    if x.dim != y.dim:
        raise MixedExtractors(f"dimensions disagree: {x.dim} vs {y.dim}")

    def center(v: np.ndarray) -> np.ndarray:
        c = v.astype(np.float64)
        c -= c.mean()
        n = float(np.linalg.norm(c))
        if n < _NORM_EPS:
            raise ZeroVariance("feature vector is constant")
        return c / n

    return float(np.clip(np.dot(center(x.values), center(y.values)), -1.0, 1.0))


def embed_pooled(
    pooled: PooledTemplate,
    extractor,
    member_rasters: dict[str, np.ndarray] | None = None,
) -> PooledTemplate:
    """Fill a feature into every entry of a pooled template.

    Image-carrying entries are embedded directly (external lookup uses the
    entry_id). Feature-mode entries embed each member raster (or look up
    each member media_id) and pool in feature space; ``member_rasters`` maps
    media_id to its aligned raster and is only needed for that path with the
    baseline extractor.
    """
    features = []
    for entry in pooled.entries:
        if entry.image is not None:
            features.append(extract(entry.image, extractor, provenance_id=entry.entry_id))
            continue
        member_feats = []
        for mid in entry.member_ids:
            raster = None
            if member_rasters is not None:
                raster = member_rasters.get(mid)
            if raster is None and getattr(extractor, "kind", "") != "external_lookup":
                raise EmbeddingError(
                    f"feature pooling needs the aligned raster of {mid}"
                )
            member_feats.append(extract(raster, extractor, provenance_id=mid))
        features.append(pool_features(member_feats))
    return pooled.with_features(features)


# ---------------------------------------------------------------------------
# feature store file format


def write_feature_store(path: str | Path, ids, matrix: np.ndarray) -> None:
    """Write vectors to the binary store plus its JSON sidecar.

    Layout: magic ``FPF1``, little-endian uint32 count and dimension, then
    float32 rows. The sidecar ``<path>.json`` maps row index to provenance id.
    """
    m = np.ascontiguousarray(np.asarray(matrix, dtype=np.float32))
    ids = list(ids)
    if m.ndim != 2:
        raise ValueError("matrix must be 2D")
    if len(ids) != m.shape[0]:
        raise ValueError(f"{len(ids)} ids for {m.shape[0]} rows")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(FPF1_MAGIC)
        fh.write(struct.pack("<II", m.shape[0], m.shape[1]))
        fh.write(m.tobytes(order="C"))
    sidecar = {str(i): pid for i, pid in enumerate(ids)}
    with open(path.with_name(path.name + ".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_feature_store(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read a binary feature store; returns (provenance ids, float32 matrix)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FPF1_MAGIC:
            raise ValueError(f"{path} is not a feature store (magic {magic!r})")
        n, d = struct.unpack("<II", fh.read(8))
        payload = fh.read(n * d * 4)
    if len(payload) != n * d * 4:
        raise ValueError(f"{path} truncated: expected {n}x{d} float32 rows")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(n, d).copy()
    sidecar_path = path.with_name(path.name + ".json")
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    if set(sidecar) != {str(i) for i in range(n)}:
        raise ValueError(f"{sidecar_path} does not map every row exactly once")
    ids = [sidecar[str(i)] for i in range(n)]
    return ids, matrix
