"""Template-to-template similarity.

Every entry of one template is correlated against every entry of the other;
the score matrix is fused to a scalar by a softmax-weighted average swept
over a grid of sharpness values. At sharpness 0 this is the plain mean, for
large values it approaches the best pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import FacepoolError, PooledTemplate, _freeze
from .embedding import MixedExtractors, ncc

__all__ = [
    "MatchingError",
    "EmptyMatrix",
    "InvalidTemplatePair",
    "PairScoreMatrix",
    "pair_scores",
    "softmax_fuse",
    "template_similarity",
    "DEFAULT_BETAS",
]

#: sharpness sweep for fusion, averaged into the final similarity
DEFAULT_BETAS = tuple(float(b) for b in range(21))

_NORM_EPS = 1e-12


class MatchingError(FacepoolError):
    pass


class EmptyMatrix(MatchingError):
    """Fusion asked for on a matrix with no scores."""


class InvalidTemplatePair(MatchingError):
    """No comparable entry pair exists between the two templates."""


@dataclass(frozen=True)
class PairScoreMatrix:
    """All entry-vs-entry correlations between a probe and a gallery template."""

    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]
    scores: np.ndarray  # (len(row_ids), len(col_ids)) float64 in [-1, 1]

    def __post_init__(self):
        s = np.ascontiguousarray(np.asarray(self.scores, dtype=np.float64))
        if s.shape != (len(self.row_ids), len(self.col_ids)):
            raise ValueError("score matrix shape must match the id tuples")
        if s.size and (s.min() < -1.0 - 1e-9 or s.max() > 1.0 + 1e-9):
            raise ValueError("correlations must lie in [-1, 1]")
        object.__setattr__(self, "scores", _freeze(s))


def _centered_rows(template: PooledTemplate):
    """Centered unit-norm feature rows; constant features are dropped."""
    ids, rows = [], []
    extractor_ids = set()
    for entry in template.entries:
        if entry.feature is None:
            raise MatchingError(
                f"entry {entry.entry_id} has no feature; run the embedding stage first"
            )
        extractor_ids.add(entry.feature.extractor_id)
        v = entry.feature.values.astype(np.float64)
        v = v - v.mean()
        n = float(np.linalg.norm(v))
        if n < _NORM_EPS:
            continue
        ids.append(entry.entry_id)
        rows.append(v / n)
    return ids, rows, extractor_ids


def pair_scores(probe: PooledTemplate, gallery: PooledTemplate) -> PairScoreMatrix:
    """Correlate every probe entry with every gallery entry.

    Entries whose feature is constant cannot be correlated and are left out;
    when either side loses all of its entries that way the pair is
    unmatchable and InvalidTemplatePair is raised.
    """
    rid, rrows, rext = _centered_rows(probe)
    cid, crows, cext = _centered_rows(gallery)
    if len(rext | cext) > 1:
        raise MixedExtractors(f"templates embed with {sorted(rext | cext)}")
    if not rrows or not crows:
        raise InvalidTemplatePair(
            f"no comparable entries between {probe.template_id} and {gallery.template_id}"
        )
    scores = np.clip(np.asarray(rrows) @ np.asarray(crows).T, -1.0, 1.0)
    return PairScoreMatrix(row_ids=tuple(rid), col_ids=tuple(cid), scores=scores)


def softmax_fuse(matrix, beta: float) -> float:
    """Fuse a score matrix to a scalar by softmax weighting.

    Weights are exp(beta * score) with the max subtracted first, so any beta
    is safe from overflow. Sums use math.fsum, making the result independent
    of element order; fusing a matrix and its transpose agree to the last bit.
    """
    if isinstance(matrix, PairScoreMatrix):
        scores = matrix.scores
    else:
        scores = np.asarray(matrix, dtype=np.float64)
    flat = scores.ravel()
    if flat.size == 0:
        raise EmptyMatrix("cannot fuse an empty score matrix")
    if not math.isfinite(beta) or beta < 0:
        raise ValueError("beta must be finite and non-negative")
    m = float(flat.max())
    weights = np.exp(beta * (flat - m))
    num = math.fsum((weights * flat).tolist())
    den = math.fsum(weights.tolist())
    return num / den


def template_similarity(
    probe: PooledTemplate, gallery: PooledTemplate, betas=DEFAULT_BETAS
) -> float:
    """Scalar similarity of two pooled templates.

    One correlation matrix, fused once per sharpness value, averaged. The
    result is symmetric in its arguments up to the last bit.
    """
    betas = tuple(betas)
    if not betas:
        raise ValueError("need at least one beta")
    matrix = pair_scores(probe, gallery)
    fused = [softmax_fuse(matrix, b) for b in betas]
    return math.fsum(fused) / len(fused)
