"""Domain data model shared by the whole pipeline.

Images are held as float32 rasters in [0, 1], shape (H, W) for grayscale or
(H, W, 3) for RGB; 8-bit quantization happens only at file I/O. All types
are immutable after construction (arrays are marked read-only) and safe to
share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

MEDIA_KINDS = ("still", "frame")
N_LANDMARKS = 68

# BT.601 luma weights, used wherever a single channel is needed.
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


class FacepoolError(Exception):
    """Base class for every error raised by this package."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.flags.writeable = False
    return out


def to_gray(image: np.ndarray) -> np.ndarray:
    """Collapse an RGB raster to BT.601 luma; grayscale passes through."""
    if image.ndim == 2:
        return np.asarray(image, dtype=np.float64)
    return np.asarray(image, dtype=np.float64) @ _LUMA


def quantize_u8(image: np.ndarray) -> np.ndarray:
    """Float [0, 1] raster to 8-bit, round-half-up."""
    levels = np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(levels, 0, 255).astype(np.uint8)


def from_u8(raw: np.ndarray) -> np.ndarray:
    return _freeze((raw.astype(np.float32) / np.float32(255.0)))


def load_image(path: str | Path) -> np.ndarray:
    """Read an 8-bit image file into the internal float32 representation."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        raw = np.asarray(im)
    return from_u8(raw)

def save_image_u8(path: str | Path, image: np.ndarray) -> None:
    """Write a float raster as an 8-bit PNG-compatible file."""
    Image.fromarray(quantize_u8(image)).save(path)


@dataclass(frozen=True)
class FaceMedia:
    """One still image or video frame with its 68-point landmarks."""

    media_id: str
    image: np.ndarray
    landmarks: np.ndarray
    media_kind: str = "still"
    source_path: str = ""

    def __post_init__(self):
        object.__setattr__(self, "image", _freeze(np.asarray(self.image, dtype=np.float32)))
        object.__setattr__(
            self, "landmarks", _freeze(np.asarray(self.landmarks, dtype=np.float64))
        )
        if self.media_kind not in MEDIA_KINDS:
            raise ValueError(f"media_kind must be one of {MEDIA_KINDS}")
        if self.image.ndim not in (2, 3) or (self.image.ndim == 3 and self.image.shape[2] != 3):
            raise ValueError("image must be HxW or HxWx3")
        h, w = self.image.shape[:2]
        if h < 8 or w < 8:
            raise ValueError(f"image too small: {h}x{w}")
        if self.landmarks.shape != (N_LANDMARKS, 2):
            raise ValueError(
                f"expected {N_LANDMARKS} landmark points, got shape {self.landmarks.shape}"
            )
        # NaN rows mark landmarks the detector failed on; finite ones may
        # exceed the crop slightly but not by more than half its extent.
        finite = np.isfinite(self.landmarks).all(axis=1)
        x, y = self.landmarks[finite, 0], self.landmarks[finite, 1]
        if not (
            np.all(x >= -0.5 * w) and np.all(x <= 1.5 * w)
            and np.all(y >= -0.5 * h) and np.all(y <= 1.5 * h)
        ):
            raise ValueError(f"landmarks of {self.media_id} exceed the allowed margin")

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass(frozen=True)
class Template:
    """A set of media items belonging to one subject."""

    template_id: str
    subject_id: str
    media: tuple[FaceMedia, ...]

    def __post_init__(self):
        object.__setattr__(self, "media", tuple(self.media))
        if len(self.media) < 1:
            raise ValueError(f"template {self.template_id} has no media")
        ids = [m.media_id for m in self.media]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate media_id in template {self.template_id}")

    def __len__(self) -> int:
        return len(self.media)


N_POSE_BINS = 4
N_QUALITY_BINS = 5


@dataclass(frozen=True, order=True)
class BinKey:
    """One of the 20 (pose, quality) cells; ordered lexicographically."""

    pose_bin: int
    quality_bin: int

    def __post_init__(self):
        if not 0 <= self.pose_bin < N_POSE_BINS:
            raise ValueError(f"pose_bin out of range: {self.pose_bin}")
        if not 0 <= self.quality_bin < N_QUALITY_BINS:
            raise ValueError(f"quality_bin out of range: {self.quality_bin}")

    def __str__(self) -> str:
        return f"{self.pose_bin}{self.quality_bin}"


ALL_BIN_KEYS = tuple(
    BinKey(p, q) for p in range(N_POSE_BINS) for q in range(N_QUALITY_BINS)
)


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-dimension real feature; vectors from different extractors never mix."""

    values: np.ndarray
    extractor_id: str

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(np.asarray(self.values, dtype=np.float32)))
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValueError("feature values must be a non-empty 1-d vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")

    @property
    def dim(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class PooledEntry:
    """One representation item of a pooled template.

    `key` is the populated bin for binned modes and None for modes that do
    not bin (all_images, single_image, single_feature). `entry_id` is the
    provenance id used in feature stores and output filenames.
    """

    entry_id: str
    key: BinKey | None
    image: np.ndarray | None
    member_ids: tuple[str, ...]
    feature: FeatureVector | None = None

    def __post_init__(self):
        if self.image is not None:
            object.__setattr__(self, "image", _freeze(np.asarray(self.image, dtype=np.float32)))
        object.__setattr__(self, "member_ids", tuple(self.member_ids))
        if len(self.member_ids) < 1:
            raise ValueError("entry must have at least one member")

    @property
    def member_count(self) -> int:
        return len(self.member_ids)

    def with_feature(self, feature: FeatureVector) -> "PooledEntry":
        return PooledEntry(self.entry_id, self.key, self.image, self.member_ids, feature)


@dataclass(frozen=True)
class PooledTemplate:
    """A template after pooling: a small ordered collection of entries.

    For the binned modes entries map one-to-one onto populated BinKeys
    (at most 20, never more than the raw cardinality) and member counts sum
    to the raw template size. `by_bin` exposes that mapping.
    """

    template_id: str
    subject_id: str
    entries: tuple[PooledEntry, ...]
    mode: str = "image_per_bin"

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if len(self.entries) < 1:
            raise ValueError(f"pooled template {self.template_id} has no entries")
        keys = [e.key for e in self.entries if e.key is not None]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate bin keys in pooled template")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def member_total(self) -> int:
        return sum(e.member_count for e in self.entries)

    def by_bin(self) -> dict[BinKey, PooledEntry]:
        return {e.key: e for e in self.entries if e.key is not None}

    def with_features(self, features: list[FeatureVector]) -> "PooledTemplate":
        if len(features) != len(self.entries):
            raise ValueError("one feature per entry required")
        entries = tuple(e.with_feature(f) for e, f in zip(self.entries, features))
        return PooledTemplate(self.template_id, self.subject_id, entries, self.mode)

    def save_npz(self, path: str | Path) -> None:
        """Full-fidelity serialization (float images preserved bit-exactly)."""
        meta = {
            "template_id": self.template_id,
            "subject_id": self.subject_id,
            "mode": self.mode,
            "entries": [
                {
                    "entry_id": e.entry_id,
                    "key": [e.key.pose_bin, e.key.quality_bin] if e.key else None,
                    "member_ids": list(e.member_ids),
                    "has_image": e.image is not None,
                    "extractor_id": e.feature.extractor_id if e.feature else None,
                }
                for e in self.entries
            ],
        }
        arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
        for i, e in enumerate(self.entries):
            if e.image is not None:
                arrays[f"image_{i}"] = np.asarray(e.image)
            if e.feature is not None:
                arrays[f"feature_{i}"] = np.asarray(e.feature.values)
        np.savez(path, **arrays)

    @staticmethod
    def load_npz(path: str | Path) -> "PooledTemplate":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            entries = []
            for i, em in enumerate(meta["entries"]):
                image = data[f"image_{i}"] if em["has_image"] else None
                feature = None
                if em["extractor_id"] is not None:
                    feature = FeatureVector(data[f"feature_{i}"], em["extractor_id"])
                key = BinKey(*em["key"]) if em["key"] is not None else None
                entries.append(
                    PooledEntry(em["entry_id"], key, image, tuple(em["member_ids"]), feature)
                )
        return PooledTemplate(
            meta["template_id"], meta["subject_id"], tuple(entries), meta["mode"]
        )
