"""No-reference image quality from block entropies.

The image is scored at three dyadic scales. At each scale it is tiled into
8x8 blocks; every block yields a spatial entropy (histogram of quantized
pixels) and a spectral entropy (distribution of squared DCT coefficients
without the DC term). Block values are percentile-pooled to shed outliers,
then summarized by mean and skew. The scalar score blends the full-scale
means and is mapped onto five bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import FacepoolError, to_gray
from ._kernels import block_entropies

__all__ = [
    "QualityFeatures",
    "QualityScore",
    "ImageTooSmall",
    "sseq_features",
    "quality_score",
    "quantize_quality",
    "DEFAULT_QUALITY_EDGES",
    "SCALES",
    "BLOCK",
]

SCALES = (1.0, 0.5, 0.25)
BLOCK = 8
_MIN_SIDE = 32
# entropy ceilings used to normalize the score: 64 pixels per block bound the
# spatial term by 6 bits but the histogram resolution allows up to 8; the
# spectral distribution has 63 AC coefficients
_SPATIAL_CEIL = 8.0
_SPECTRAL_CEIL = math.log2(63.0)

DEFAULT_QUALITY_EDGES = (0.45, 0.55, 0.65, 0.75)


class ImageTooSmall(FacepoolError):
    """Image too small to tile into 8x8 blocks at every scale."""


@dataclass(frozen=True)
class QualityFeatures:
    """Pooled entropy summaries, one entry per scale (1, 1/2, 1/4)."""

    spatial_mean: tuple[float, float, float]
    spatial_skew: tuple[float, float, float]
    spectral_mean: tuple[float, float, float]
    spectral_skew: tuple[float, float, float]

    def as_vector(self) -> np.ndarray:
        """All 12 features, scale-major, mean before skew."""
        out = []
        for s in range(3):
            out += [
                self.spatial_mean[s],
                self.spatial_skew[s],
                self.spectral_mean[s],
                self.spectral_skew[s],
            ]
        return np.asarray(out, dtype=np.float64)


@dataclass(frozen=True)
class QualityScore:
    score: float
    quality_bin: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("quality score must lie in [0, 1]")
        if not 0 <= self.quality_bin <= 4:
            raise ValueError("quality bin must lie in 0..4")


def _downscale2(img: np.ndarray) -> np.ndarray:
    """Halve each side by 2x2 box averaging, dropping a trailing odd row/col."""
    h, w = img.shape
    h2, w2 = (h // 2) * 2, (w // 2) * 2
    v = img[:h2, :w2].astype(np.float64)
    return (v.reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))).astype(np.float32)


def _skew(values: np.ndarray) -> float:
    """Adjusted Fisher-Pearson skewness; 0 for n < 3 or a flat sample."""
    n = values.size
    if n < 3:
        return 0.0
    m = values.mean()
    d = values - m
    m2 = float(np.mean(d * d))
    if m2 < 1e-24:
        return 0.0
    m3 = float(np.mean(d * d * d))
    g1 = m3 / m2**1.5
    return g1 * math.sqrt(n * (n - 1.0)) / (n - 2.0)


def _percentile_pool(values: np.ndarray) -> np.ndarray:
    """Keep the central 60 percent of the sorted values (drop 20 each side)."""
    v = np.sort(values)
    k = int(0.2 * v.size)
    if v.size - 2 * k < 1:
        return v
    return v[k : v.size - k]


def sseq_features(image: np.ndarray) -> QualityFeatures:
    """Entropy features at three dyadic scales.

    Accepts a grayscale or RGB float raster in [0, 1]; RGB is converted to
    luma first. Raises ImageTooSmall below 32 px on either side.
    """
    gray = to_gray(np.asarray(image, dtype=np.float32))
    h, w = gray.shape
    if h < _MIN_SIDE or w < _MIN_SIDE:
        raise ImageTooSmall(f"need at least {_MIN_SIDE} px per side, got {h}x{w}")

    spa_mean, spa_skew, spe_mean, spe_skew = [], [], [], []
    cur = np.ascontiguousarray(gray)
    for _ in SCALES:
        spatial, spectral = block_entropies(cur)
        ps = _percentile_pool(spatial)
        pf = _percentile_pool(spectral)
        spa_mean.append(float(ps.mean()))
        spa_skew.append(_skew(ps))
        spe_mean.append(float(pf.mean()))
        spe_skew.append(_skew(pf))
        cur = _downscale2(cur)
    return QualityFeatures(
        spatial_mean=tuple(spa_mean),
        spatial_skew=tuple(spa_skew),
        spectral_mean=tuple(spe_mean),
        spectral_skew=tuple(spe_skew),
    )


def quantize_quality(score: float, edges=DEFAULT_QUALITY_EDGES) -> int:
    """Map a score in [0, 1] to one of five bins split at the given edges."""
    if not math.isfinite(score):
        raise ValueError("quality score must be finite")
    return int(np.searchsorted(np.asarray(edges, dtype=np.float64), score, side="right"))


def quality_score(image: np.ndarray, edges=DEFAULT_QUALITY_EDGES) -> QualityScore:
    """Scalar quality in [0, 1] plus its bin.

    Blends the full-scale spectral and spatial entropy means, each clamped
    after normalizing by its ceiling. Sharper, more textured images score
    higher; blur and flat regions pull both terms down.
    """
    feats = sseq_features(image)
    spectral = min(1.0, max(0.0, feats.spectral_mean[0] / _SPECTRAL_CEIL))
    spatial = min(1.0, max(0.0, feats.spatial_mean[0] / _SPATIAL_CEIL))
    score = 0.5 * spectral + 0.5 * spatial
    return QualityScore(score=score, quality_bin=quantize_quality(score, edges))
