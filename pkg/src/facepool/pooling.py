"""Pooling aligned face media into compact template representations.

A template's media are routed into 4 pose x 5 quality bins and each
populated bin is collapsed to one artifact, usually the pixelwise mean of
its members. Alternative modes keep every image, keep one image, pick a
random member per bin, or defer the collapse to feature space.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import BinKey, FacepoolError, PooledEntry, PooledTemplate, Template
from .pose import AlignedFace
from .quality import QualityScore

__all__ = [
    "PoolMode",
    "PreparedMedia",
    "BinnedTemplate",
    "PoolingError",
    "EmptyBin",
    "EmptyTemplate",
    "ShapeMismatch",
    "assign_bin",
    "bin_template",
    "pool_bin",
    "pool_template",
]


class PoolingError(FacepoolError):
    pass


class EmptyBin(PoolingError):
    """Asked to pool a bin with no members."""


class EmptyTemplate(PoolingError):
    """No usable media survived preprocessing for this template."""


class ShapeMismatch(PoolingError):
    """Members of one bin disagree in raster shape."""


class PoolMode(str, Enum):
    """How a template's media collapse into matchable entries."""

    all_images = "all_images"
    single_image = "single_image"
    single_feature = "single_feature"
    random_per_bin = "random_per_bin"
    feature_per_bin = "feature_per_bin"
    image_per_bin = "image_per_bin"
    median_per_bin = "median_per_bin"


#: modes whose entries carry an image produced by binning
BINNED_IMAGE_MODES = frozenset(
    {PoolMode.image_per_bin, PoolMode.median_per_bin, PoolMode.random_per_bin}
)
#: modes whose entries carry no image; features are pooled instead
FEATURE_MODES = frozenset({PoolMode.single_feature, PoolMode.feature_per_bin})


@dataclass(frozen=True)
class PreparedMedia:
    """One media item after alignment, quality scoring and binning."""

    media_id: str
    aligned: AlignedFace
    quality: QualityScore
    bin_key: BinKey


def assign_bin(face: AlignedFace, quality: QualityScore, yaw_edges=None) -> BinKey:
    """Route a face to its (pose, quality) bin from its yaw angle and score."""
    from .pose import DEFAULT_YAW_EDGES, quantize_yaw

    edges = DEFAULT_YAW_EDGES if yaw_edges is None else yaw_edges
    return BinKey(
        pose_bin=quantize_yaw(face.pose.yaw_deg, edges),
        quality_bin=quality.quality_bin,
    )


class BinnedTemplate(dict):
    """Mapping of BinKey to the list of PreparedMedia routed there."""


def bin_template(prepared: list[PreparedMedia]) -> BinnedTemplate:
    out = BinnedTemplate()
    for pm in prepared:
        out.setdefault(pm.bin_key, []).append(pm)
    return out


def pool_bin(rasters, reducer: str = "mean") -> np.ndarray:
    """Collapse same-shaped rasters to one by pixelwise mean (or median).

    Accumulates in float64 and returns float32. The result depends on the
    input order only through float rounding; callers wanting bit-stable
    output must fix the order (pool_template sorts by media_id).
    """
    rasters = list(rasters)
    if not rasters:
        raise EmptyBin("cannot pool an empty bin")
    shape = rasters[0].shape
    for r in rasters[1:]:
        if r.shape != shape:
            raise ShapeMismatch(f"raster shapes differ: {shape} vs {r.shape}")
    stack = np.stack([np.asarray(r, dtype=np.float64) for r in rasters])
    if reducer == "mean":
        pooled = stack.mean(axis=0)
    elif reducer == "median":
        pooled = np.median(stack, axis=0)
    else:
        raise ValueError(f"unknown reducer {reducer!r}")
    return pooled.astype(np.float32)


def _bin_rng(seed: int, template_id: str, key: BinKey) -> np.random.Generator:
    """Independent stream per (seed, template, bin), stable across runs."""
    digest = hashlib.blake2s(template_id.encode("utf-8"), digest_size=8).digest()
    tid = int.from_bytes(digest, "little")
    return np.random.default_rng([int(seed), tid, key.pose_bin, key.quality_bin])


def pool_template(
    template: Template,
    prepared: list[PreparedMedia],
    mode: PoolMode,
    seed: int = 0,
) -> PooledTemplate:
    """Build the pooled representation of one template.

    ``prepared`` holds the template's media after preprocessing (possibly
    fewer than template.media when some were skipped). Members are always
    processed in media_id order, so any permutation of the input list yields
    a bit-identical result. Entries of feature modes carry no image; the
    embedding stage fills features in later for every mode.
    """
    mode = PoolMode(mode)
    if not prepared:
        raise EmptyTemplate(f"template {template.template_id} has no usable media")
    known = {m.media_id for m in template.media}
    for pm in prepared:
        if pm.media_id not in known:
            raise ValueError(f"{pm.media_id} does not belong to {template.template_id}")
    prepared = sorted(prepared, key=lambda pm: pm.media_id)

    entries: list[PooledEntry] = []
    if mode is PoolMode.all_images:
        for pm in prepared:
            entries.append(
                PooledEntry(
                    entry_id=pm.media_id,
                    key=None,
                    image=pm.aligned.raster,
                    member_ids=(pm.media_id,),
                )
            )
    elif mode is PoolMode.single_image:
        entries.append(
            PooledEntry(
                entry_id=f"{template.template_id}/all",
                key=None,
                image=pool_bin([pm.aligned.raster for pm in prepared]),
                member_ids=tuple(pm.media_id for pm in prepared),
            )
        )
    elif mode is PoolMode.single_feature:
        entries.append(
            PooledEntry(
                entry_id=f"{template.template_id}/all",
                key=None,
                image=None,
                member_ids=tuple(pm.media_id for pm in prepared),
            )
        )
    else:
        binned = bin_template(prepared)
        for key in sorted(binned):
            members = binned[key]
            ids = tuple(pm.media_id for pm in members)
            entry_id = f"{template.template_id}/{key}"
            if mode is PoolMode.image_per_bin:
                image = pool_bin([pm.aligned.raster for pm in members])
            elif mode is PoolMode.median_per_bin:
                image = pool_bin([pm.aligned.raster for pm in members], reducer="median")
            elif mode is PoolMode.random_per_bin:
                rng = _bin_rng(seed, template.template_id, key)
                pick = members[int(rng.integers(len(members)))]
                image = pick.aligned.raster
            elif mode is PoolMode.feature_per_bin:
                image = None
            else:  # pragma: no cover
                raise ValueError(f"unhandled mode {mode}")
            entries.append(
                PooledEntry(entry_id=entry_id, key=key, image=image, member_ids=ids)
            )

    return PooledTemplate(
        template_id=template.template_id,
        subject_id=template.subject_id,
        entries=tuple(entries),
        mode=mode.value,
    )
