"""Verification and identification metrics.

ROC curves are empirical step functions over the pooled score values, read
conservatively (TPR at an FPR budget never interpolates above what a real
threshold achieves). Identification uses closed-set CMC with pessimistic tie
handling. The normalized partial AUC rescales the area over a low-FPR window
so that a perfect matcher scores 1 and a chance one 0.5.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FacepoolError, _freeze

__all__ = [
    "EvaluationError",
    "EmptyScoreList",
    "DegenerateRange",
    "ProbeSubjectNotEnrolled",
    "EmptyCollection",
    "RocCurve",
    "CmcCurve",
    "FprAtTpr",
    "EvalReport",
    "roc",
    "tpr_at_fpr",
    "fpr_at_tpr",
    "nauc",
    "cmc",
    "template_size_stats",
    "build_report",
    "write_report",
]


class EvaluationError(FacepoolError):
    pass


class EmptyScoreList(EvaluationError):
    pass


class DegenerateRange(EvaluationError):
    pass


class ProbeSubjectNotEnrolled(EvaluationError):
    """Closed-set CMC requires every probe subject in the gallery exactly once."""


class EmptyCollection(EvaluationError):
    pass


@dataclass(frozen=True)
class RocCurve:
    """Empirical ROC: operating points at every distinct score threshold.

    Arrays share one length; point k is the rates of the rule
    ``score >= thresholds[k]``. The first point is (0, 0) at threshold +inf
    and both rates are non-decreasing.
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self):
        f = np.ascontiguousarray(np.asarray(self.fpr, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.tpr, dtype=np.float64))
        th = np.ascontiguousarray(np.asarray(self.thresholds, dtype=np.float64))
        if not (f.shape == t.shape == th.shape) or f.ndim != 1 or f.size < 1:
            raise ValueError("fpr, tpr and thresholds must be equal-length 1D arrays")
        if np.any(np.diff(f) < 0) or np.any(np.diff(t) < 0):
            raise ValueError("ROC rates must be non-decreasing")
        if f.min() < 0 or f.max() > 1 or t.min() < 0 or t.max() > 1:
            raise ValueError("rates must lie in [0, 1]")
        object.__setattr__(self, "fpr", _freeze(f))
        object.__setattr__(self, "tpr", _freeze(t))
        object.__setattr__(self, "thresholds", _freeze(th))


@dataclass(frozen=True)
class CmcCurve:
    """Cumulative match characteristic; rates[k] is the rank k+1 hit rate."""

    rates: np.ndarray

    def __post_init__(self):
        r = np.ascontiguousarray(np.asarray(self.rates, dtype=np.float64))
        if r.ndim != 1 or r.size < 1:
            raise ValueError("rates must be a non-empty 1D array")
        if np.any(np.diff(r) < 0) or r.min() < 0 or abs(r[-1] - 1.0) > 1e-12:
            raise ValueError("rates must be non-decreasing and end at 1")
        object.__setattr__(self, "rates", _freeze(r))

    def rate_at(self, rank: int) -> float:
        if rank < 1:
            raise ValueError("rank is 1-based")
        return float(self.rates[min(rank, self.rates.size) - 1])


@dataclass(frozen=True)
class FprAtTpr:
    """FPR needed to reach a TPR target; unreachable means only FPR = 1 does."""

    value: float
    unreachable: bool


def roc(genuine, impostor) -> RocCurve:
    """Empirical ROC from two score lists, higher score means more alike.

    Thresholds are the distinct observed scores in descending order, so tied
    scores move together; a leading (0, 0) point at +inf anchors the curve.
    """
    g = np.sort(np.asarray(list(genuine), dtype=np.float64))
    m = np.sort(np.asarray(list(impostor), dtype=np.float64))
    if g.size == 0 or m.size == 0:
        raise EmptyScoreList("need at least one genuine and one impostor score")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(m))):
        raise ValueError("scores must be finite")
    thr = np.unique(np.concatenate([g, m]))[::-1]
    tpr = (g.size - np.searchsorted(g, thr, side="left")) / g.size
    fpr = (m.size - np.searchsorted(m, thr, side="left")) / m.size
    return RocCurve(
        fpr=np.concatenate([[0.0], fpr]),
        tpr=np.concatenate([[0.0], tpr]),
        thresholds=np.concatenate([[np.inf], thr]),
    )


def tpr_at_fpr(curve: RocCurve, target_fpr: float) -> float:
    """TPR of the strictest threshold whose FPR stays within the budget.

    Step-function read, no interpolation: the answer is achieved by an
    actual threshold.
    """
    if not 0.0 <= target_fpr <= 1.0:
        raise ValueError("target FPR must lie in [0, 1]")
    idx = int(np.searchsorted(curve.fpr, target_fpr, side="right")) - 1
    # among operating points tied at this fpr, the latest has the highest tpr
    return float(curve.tpr[idx])


def fpr_at_tpr(curve: RocCurve, target_tpr: float = 0.85) -> FprAtTpr:
    """Smallest FPR among thresholds whose TPR meets the target."""
    if not 0.0 <= target_tpr <= 1.0:
        raise ValueError("target TPR must lie in [0, 1]")
    meets = np.nonzero(curve.tpr >= target_tpr)[0]
    if meets.size == 0:
        # cannot happen for curves built by roc(): the last point is (1, 1)
        return FprAtTpr(value=1.0, unreachable=True)
    value = float(curve.fpr[meets[0]])
    return FprAtTpr(value=value, unreachable=bool(value >= 1.0))


def nauc(curve: RocCurve, fpr_range: tuple[float, float] = (0.0, 0.01)) -> float:
    """Normalized partial AUC over a low-FPR window.

    The trapezoidal area under the window is standardized against the
    perfect area (width) and the chance area (under TPR = FPR), mapping a
    perfect matcher to 1 and a chance matcher to 0.5 whatever the window.
    """
    lo, hi = float(fpr_range[0]), float(fpr_range[1])
    if not (0.0 <= lo < hi <= 1.0):
        raise DegenerateRange(f"need 0 <= lo < hi <= 1, got ({lo}, {hi})")
    # collapse vertical jumps to their upper envelope for interpolation
    fpr, tpr = curve.fpr, curve.tpr
    keep_f, keep_t = [], []
    for f, t in zip(fpr.tolist(), tpr.tolist()):
        if keep_f and f == keep_f[-1]:
            keep_t[-1] = max(keep_t[-1], t)
        else:
            keep_f.append(f)
            keep_t.append(t)
    kf = np.asarray(keep_f)
    kt = np.asarray(keep_t)
    inside = kf[(kf > lo) & (kf < hi)]
    xs = np.concatenate([[lo], inside, [hi]])
    ys = np.interp(xs, kf, kt)
    area = float(np.trapezoid(ys, xs))
    perfect = hi - lo
    chance = (hi * hi - lo * lo) / 2.0
    return 0.5 * (1.0 + (area - chance) / (perfect - chance))


def cmc(scores: np.ndarray, probe_subjects, gallery_subjects) -> CmcCurve:
    """Closed-set identification curve from a probe x gallery score matrix.

    Every probe's subject must be enrolled exactly once. Ties are pessimistic:
    a probe's rank counts every gallery score at least as high as its mate's.
    """
    s = np.asarray(scores, dtype=np.float64)
    probes = list(probe_subjects)
    gallery = list(gallery_subjects)
    if s.ndim != 2 or s.shape != (len(probes), len(gallery)):
        raise ValueError("scores must be (len(probes), len(gallery))")
    if len(probes) == 0 or len(gallery) == 0:
        raise EmptyScoreList("need at least one probe and one gallery template")
    positions: dict[str, list[int]] = {}
    for j, subj in enumerate(gallery):
        positions.setdefault(subj, []).append(j)
    ranks = np.empty(len(probes), dtype=np.int64)
    for i, subj in enumerate(probes):
        where = positions.get(subj, [])
        if len(where) != 1:
            raise ProbeSubjectNotEnrolled(
                f"subject {subj!r} enrolled {len(where)} times, need exactly 1"
            )
        mate = where[0]
        ranks[i] = int(np.sum(s[i] >= s[i, mate]))
    ks = np.arange(1, len(gallery) + 1)
    rates = np.asarray([(ranks <= k).mean() for k in ks])
    return CmcCurve(rates=rates)


def template_size_stats(sizes) -> tuple[float, float]:
    """Mean and population standard deviation of per-template counts.

    Accepts plain integers, raw templates (counting their media) or pooled
    templates (counting their entries, the units that actually match).
    """
    counts = []
    for item in sizes:
        if isinstance(item, (int, np.integer)):
            counts.append(int(item))
        elif hasattr(item, "entries"):
            counts.append(len(item.entries))
        elif hasattr(item, "media"):
            counts.append(len(item.media))
        else:
            raise TypeError(f"cannot take a template size from {type(item).__name__}")
    if not counts:
        raise EmptyCollection("no templates to summarize")
    arr = np.asarray(counts, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@dataclass(frozen=True)
class EvalReport:
    """Protocol results in the shape the reporting tables use.

    Verification fields are None when the protocol has no pairs, rank fields
    None when it has no identification split.
    """

    tpr_1f: float | None = None
    tpr_01f: float | None = None
    tpr_001f: float | None = None
    naucj: float | None = None
    fpr_85t: float | None = None
    fpr_85t_unreachable: bool | None = None
    rank1: float | None = None
    rank5: float | None = None
    rank10: float | None = None
    avg_img_g: tuple[float, float] | None = None
    avg_img_p: tuple[float, float] | None = None
    roc_curve: RocCurve | None = field(default=None, repr=False)
    cmc_curve: CmcCurve | None = field(default=None, repr=False)

    def to_json_dict(self) -> dict:
        def pair(v):
            return None if v is None else {"avg": v[0], "sd": v[1]}

        return {
            "tpr_1f": self.tpr_1f,
            "tpr_01f": self.tpr_01f,
            "tpr_001f": self.tpr_001f,
            "naucj": self.naucj,
            "fpr_85t": self.fpr_85t,
            "fpr_85t_unreachable": self.fpr_85t_unreachable,
            "rank1": self.rank1,
            "rank5": self.rank5,
            "rank10": self.rank10,
            "avg_img_g": pair(self.avg_img_g),
            "avg_img_p": pair(self.avg_img_p),
        }


def build_report(
    genuine=None,
    impostor=None,
    id_scores=None,
    probe_subjects=None,
    gallery_subjects=None,
    gallery_sizes=None,
    probe_sizes=None,
) -> EvalReport:
    """Assemble an EvalReport from raw scores.

    Verification metrics need genuine and impostor lists; identification
    needs the score matrix plus subject labels. Either half may be omitted.
    """
    fields: dict = {}
    if genuine is not None and impostor is not None:
        curve = roc(genuine, impostor)
        fa = fpr_at_tpr(curve, 0.85)
        fields.update(
            tpr_1f=tpr_at_fpr(curve, 0.01),
            tpr_01f=tpr_at_fpr(curve, 0.001),
            tpr_001f=tpr_at_fpr(curve, 0.0001),
            naucj=nauc(curve, (0.0, 0.01)),
            fpr_85t=fa.value,
            fpr_85t_unreachable=fa.unreachable,
            roc_curve=curve,
        )
    if id_scores is not None:
        curve = cmc(id_scores, probe_subjects, gallery_subjects)
        fields.update(
            rank1=curve.rate_at(1),
            rank5=curve.rate_at(5),
            rank10=curve.rate_at(10),
            cmc_curve=curve,
        )
    if gallery_sizes is not None:
        fields["avg_img_g"] = template_size_stats(gallery_sizes)
    if probe_sizes is not None:
        fields["avg_img_p"] = template_size_stats(probe_sizes)
    return EvalReport(**fields)


def write_report(report: EvalReport, out_dir: str | Path) -> Path:
    """Write report.json plus roc.csv / cmc.csv next to it; returns the dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if report.roc_curve is not None:
        with open(out / "roc.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr", "threshold"])
            for f, t, th in zip(
                report.roc_curve.fpr, report.roc_curve.tpr, report.roc_curve.thresholds
            ):
                w.writerow([repr(float(f)), repr(float(t)), repr(float(th))])
    if report.cmc_curve is not None:
        with open(out / "cmc.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "rate"])
            for k, r in enumerate(report.cmc_curve.rates, start=1):
                w.writerow([k, repr(float(r))])
    return out
