"""Dataset ingestion and the end-to-end pipeline.

A manifest JSON enumerates templates, their media files and landmarks, and
optional per-media overrides (a known yaw angle, a precomputed quality
score). A protocol JSON lists verification pairs and the closed-set
identification split. run_pipeline ties the stages together: pose, in-plane
alignment, quality, binning, pooling, embedding, matching, metrics. Media
that fail a stage are skipped and logged, never silently dropped.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BinKey, FaceMedia, FacepoolError, Template, load_image
from .embedding import ExternalExtractor, PixelExtractor, embed_pooled
from .evaluation import EvalReport, build_report
from .matching import DEFAULT_BETAS, template_similarity
from .pooling import PoolMode, PreparedMedia, pool_template
from .pose import (
    CANONICAL_SIZE,
    DEFAULT_YAW_EDGES,
    CameraModel,
    HeadPose,
    Model3D,
    PoseError,
    bundled_model,
    canonical_align,
    compose_rotation,
    default_camera,
    roll_compensate,
    solve_pnp,
)
from .quality import DEFAULT_QUALITY_EDGES, QualityScore, quality_score, quantize_quality
from .pose import quantize_yaw

__all__ = [
    "IngestionError",
    "ParseError",
    "ValidationError",
    "MediaOverrides",
    "Manifest",
    "Protocol",
    "PipelineConfig",
    "SkipRecord",
    "RunLog",
    "PipelineResult",
    "load_manifest",
    "save_manifest",
    "load_protocol",
    "save_protocol",
    "run_pipeline",
]


class IngestionError(FacepoolError):
    pass


class ParseError(IngestionError):
    """The file is not well-formed JSON (or landmark text)."""


class ValidationError(IngestionError):
    """The file parses but violates the schema; names the offending item."""


@dataclass(frozen=True)
class MediaOverrides:
    """Optional per-media bypasses of the estimators."""

    yaw_deg: float | None = None
    quality: float | None = None


@dataclass(frozen=True)
class Manifest:
    templates: tuple[Template, ...]
    overrides: dict = field(default_factory=dict)  # media_id -> MediaOverrides
    path: str | None = None

    def media_count(self) -> int:
        return sum(len(t.media) for t in self.templates)

    def template_by_id(self) -> dict:
        return {t.template_id: t for t in self.templates}


@dataclass(frozen=True)
class Protocol:
    """Verification pairs and/or a closed-set identification split."""

    pairs: tuple[tuple[str, str, bool], ...] = ()
    gallery: tuple[str, ...] = ()
    probes: tuple[str, ...] = ()


def _load_json(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e


def _parse_landmarks_file(path: Path, media_id: str) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"{media_id}: malformed landmark line {line!r} in {path}")
            rows.append([float(parts[0]), float(parts[1])])
    if len(rows) != 68:
        raise ValidationError(f"{media_id}: landmark file {path} has {len(rows)} points, need 68")
    return np.asarray(rows, dtype=np.float64)


def load_manifest(path) -> Manifest:
    """Read and fully validate a manifest, loading images and landmarks.

    Media paths are resolved relative to the manifest's directory. Every
    validation message names the media_id (or template_id) at fault.
    """
    path = Path(path)
    doc = _load_json(path)
    base = path.parent
    if not isinstance(doc, dict) or not isinstance(doc.get("templates"), list):
        raise ValidationError(f"{path}: manifest must be an object with a 'templates' list")
    if not doc["templates"]:
        raise ValidationError(f"{path}: manifest lists no templates")

    templates = []
    overrides: dict[str, MediaOverrides] = {}
    seen_templates: set[str] = set()
    seen_media: set[str] = set()
    for trec in doc["templates"]:
        tid = trec.get("template_id")
        if not tid or not isinstance(tid, str):
            raise ValidationError(f"{path}: template without a template_id")
        if tid in seen_templates:
            raise ValidationError(f"duplicate template_id {tid!r}")
        seen_templates.add(tid)
        sid = trec.get("subject_id")
        if not sid or not isinstance(sid, str):
            raise ValidationError(f"template {tid!r}: missing subject_id")
        media_list = trec.get("media")
        if not isinstance(media_list, list) or not media_list:
            raise ValidationError(f"template {tid!r}: needs a non-empty media list")

        media = []
        for mrec in media_list:
            mid = mrec.get("media_id")
            if not mid or not isinstance(mid, str):
                raise ValidationError(f"template {tid!r}: media without a media_id")
            if mid in seen_media:
                raise ValidationError(f"duplicate media_id {mid!r}")
            seen_media.add(mid)
            rel = mrec.get("path")
            if not rel or not isinstance(rel, str):
                raise ValidationError(f"{mid}: missing image path")
            img_path = base / rel
            if not img_path.is_file():
                raise ValidationError(f"{mid}: image file not found: {img_path}")
            kind = mrec.get("media_kind", "still")

            if "landmarks" in mrec:
                lm_raw = mrec["landmarks"]
                try:
                    lm = np.asarray(lm_raw, dtype=np.float64)
                except (TypeError, ValueError) as e:
                    raise ValidationError(f"{mid}: landmarks are not numeric") from e
                if lm.shape != (68, 2):
                    raise ValidationError(
                        f"{mid}: landmarks have shape {lm.shape}, need (68, 2)"
                    )
            elif "landmarks_path" in mrec:
                lm = _parse_landmarks_file(base / mrec["landmarks_path"], mid)
            else:
                raise ValidationError(f"{mid}: needs landmarks or landmarks_path")

            ov_yaw = mrec.get("yaw_override_deg")
            ov_q = mrec.get("quality_override")
            if ov_yaw is not None and not isinstance(ov_yaw, (int, float)):
                raise ValidationError(f"{mid}: yaw_override_deg must be a number")
            if ov_q is not None:
                if not isinstance(ov_q, (int, float)) or not 0.0 <= float(ov_q) <= 1.0:
                    raise ValidationError(f"{mid}: quality_override must lie in [0, 1]")
            if ov_yaw is not None or ov_q is not None:
                overrides[mid] = MediaOverrides(
                    yaw_deg=None if ov_yaw is None else float(ov_yaw),
                    quality=None if ov_q is None else float(ov_q),
                )

            try:
                media.append(
                    FaceMedia(
                        media_id=mid,
                        image=load_image(img_path),
                        landmarks=lm,
                        media_kind=kind,
                        source_path=rel,
                    )
                )
            except ValueError as e:
                raise ValidationError(f"{mid}: {e}") from e
        templates.append(Template(template_id=tid, subject_id=sid, media=tuple(media)))
    return Manifest(templates=tuple(templates), overrides=overrides, path=str(path))


def save_manifest(manifest: Manifest, path) -> None:
    """Write a manifest back out with inline landmarks.

    Image paths are written as stored, so the file round-trips when placed
    in the same directory as the original.
    """
    doc = {"templates": []}
    for t in manifest.templates:
        trec = {"template_id": t.template_id, "subject_id": t.subject_id, "media": []}
        for m in t.media:
            mrec = {
                "media_id": m.media_id,
                "path": m.source_path,
                "media_kind": m.media_kind,
                "landmarks": np.asarray(m.landmarks, dtype=np.float64).tolist(),
            }
            ov = manifest.overrides.get(m.media_id)
            if ov is not None:
                if ov.yaw_deg is not None:
                    mrec["yaw_override_deg"] = ov.yaw_deg
                if ov.quality is not None:
                    mrec["quality_override"] = ov.quality
            trec["media"].append(mrec)
        doc["templates"].append(trec)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_protocol(path, manifest: Manifest | None = None) -> Protocol:
    """Read a protocol; with a manifest, check every referenced template exists."""
    path = Path(path)
    doc = _load_json(path)
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: protocol must be a JSON object")
    pairs = []
    for rec in doc.get("verification_pairs", []):
        try:
            pairs.append((str(rec["a"]), str(rec["b"]), bool(rec["genuine"])))
        except (KeyError, TypeError) as e:
            raise ValidationError(f"{path}: malformed verification pair {rec!r}") from e
    ident = doc.get("identification", {})
    gallery = tuple(str(g) for g in ident.get("gallery", []))
    probes = tuple(str(p) for p in ident.get("probes", []))
    if len(set(gallery)) != len(gallery):
        raise ValidationError(f"{path}: gallery lists a template twice")
    proto = Protocol(pairs=tuple(pairs), gallery=gallery, probes=probes)
    if manifest is not None:
        known = {t.template_id for t in manifest.templates}
        for a, b, _ in proto.pairs:
            for tid in (a, b):
                if tid not in known:
                    raise ValidationError(f"protocol references unknown template {tid!r}")
        for tid in (*proto.gallery, *proto.probes):
            if tid not in known:
                raise ValidationError(f"protocol references unknown template {tid!r}")
    return proto


def save_protocol(protocol: Protocol, path) -> None:
    doc = {
        "verification_pairs": [
            {"a": a, "b": b, "genuine": g} for a, b, g in protocol.pairs
        ],
        "identification": {
            "gallery": list(protocol.gallery),
            "probes": list(protocol.probes),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of the end-to-end run; defaults reproduce the reference setup."""

    crop_size: int = CANONICAL_SIZE
    pose_bin_edges: tuple[float, ...] = DEFAULT_YAW_EDGES
    quality_bin_edges: tuple[float, ...] = DEFAULT_QUALITY_EDGES
    betas: tuple[float, ...] = DEFAULT_BETAS
    mode: str = "image_per_bin"
    extractor: str = "pixels"
    feature_store: str | None = None
    seed: int = 0
    jobs: int = 1
    focal_px: float | None = None
    model3d_path: str | None = None

    def __post_init__(self):
        if self.crop_size < 32:
            raise ValueError("crop_size below 32 breaks quality scoring")
        for name, edges in (
            ("pose_bin_edges", self.pose_bin_edges),
            ("quality_bin_edges", self.quality_bin_edges),
        ):
            e = tuple(float(v) for v in edges)
            if list(e) != sorted(e) or len(set(e)) != len(e):
                raise ValueError(f"{name} must be strictly increasing")
            object.__setattr__(self, name, e)
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.betas:
            raise ValueError("need at least one beta")
        PoolMode(self.mode)
        if self.extractor not in ("pixels", "external"):
            raise ValueError(f"unknown extractor {self.extractor!r}")
        if self.extractor == "external" and not self.feature_store:
            raise ValueError("external extractor needs a feature_store path")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        doc = _load_json(Path(path))
        if not isinstance(doc, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"{path}: unknown config keys {sorted(unknown)}")
        kwargs = dict(doc)
        for key in ("pose_bin_edges", "quality_bin_edges", "betas"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except ValueError as e:
            raise ValidationError(f"{path}: {e}") from e

    def to_json_dict(self) -> dict:
        return {
            "crop_size": self.crop_size,
            "pose_bin_edges": list(self.pose_bin_edges),
            "quality_bin_edges": list(self.quality_bin_edges),
            "betas": list(self.betas),
            "mode": self.mode,
            "extractor": self.extractor,
            "feature_store": self.feature_store,
            "seed": self.seed,
            "jobs": self.jobs,
            "focal_px": self.focal_px,
            "model3d_path": self.model3d_path,
        }


@dataclass(frozen=True)
class SkipRecord:
    media_id: str
    template_id: str
    stage: str
    reason: str


@dataclass(frozen=True)
class RunLog:
    total_media: int
    processed: int
    skips: tuple[SkipRecord, ...]
    dropped_templates: tuple[str, ...]

    def reconciles(self) -> bool:
        return self.processed + len(self.skips) == self.total_media

    def to_json_dict(self) -> dict:
        return {
            "total_media": self.total_media,
            "processed": self.processed,
            "skipped": [
                {
                    "media_id": s.media_id,
                    "template_id": s.template_id,
                    "stage": s.stage,
                    "reason": s.reason,
                }
                for s in self.skips
            ],
            "dropped_templates": list(self.dropped_templates),
        }


@dataclass(frozen=True)
class PipelineResult:
    report: EvalReport
    log: RunLog
    pooled: dict  # template_id -> PooledTemplate (features filled)


def _prepare_one(
    media: FaceMedia,
    template_id: str,
    overrides: MediaOverrides | None,
    config: PipelineConfig,
    model: Model3D,
):
    """Pose + align + score one media item; returns PreparedMedia or SkipRecord."""
    try:
        if overrides is not None and overrides.yaw_deg is not None:
            yaw = float(overrides.yaw_deg)
            pose = HeadPose(
                rotation=compose_rotation(yaw, 0.0, 0.0),
                translation=np.array([0.0, 0.0, 1.0]),
                yaw_deg=yaw,
                pitch_deg=0.0,
                roll_deg=0.0,
                reproj_rmse=0.0,
            )
        else:
            h, w = media.image.shape[:2]
            cam = default_camera(w, h)
            if config.focal_px is not None:
                cam = CameraModel(focal_px=config.focal_px, principal_point=cam.principal_point)
            pose = solve_pnp(media.landmarks, model, cam)
    except (PoseError, ValueError) as e:
        return SkipRecord(media.media_id, template_id, "pose", str(e))

    try:
        raster, lm2 = roll_compensate(media, pose)
        aligned = canonical_align(
            media, pose, size=config.crop_size, landmarks=lm2, image=raster
        )
    except (PoseError, ValueError) as e:
        return SkipRecord(media.media_id, template_id, "align", str(e))

    try:
        if overrides is not None and overrides.quality is not None:
            score = float(overrides.quality)
            q = QualityScore(
                score=score, quality_bin=quantize_quality(score, config.quality_bin_edges)
            )
        else:
            q = quality_score(aligned.raster, config.quality_bin_edges)
    except FacepoolError as e:
        return SkipRecord(media.media_id, template_id, "quality", str(e))

    key = BinKey(
        pose_bin=quantize_yaw(pose.yaw_deg, config.pose_bin_edges),
        quality_bin=q.quality_bin,
    )
    return PreparedMedia(media_id=media.media_id, aligned=aligned, quality=q, bin_key=key)


def _map_indexed(fn, items, jobs: int):
    """Run fn over items, parallel when jobs > 1, output order fixed by input."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def run_pipeline(
    manifest: Manifest, protocol: Protocol, config: PipelineConfig | None = None
) -> PipelineResult:
    """Execute the full pipeline and score the protocol.

    Deterministic for a fixed (manifest, protocol, config, seed) regardless
    of the jobs count: parallel results are placed by input index and each
    item's arithmetic does not depend on batch composition.
    """
    config = config or PipelineConfig()
    model = (
        Model3D.from_file(config.model3d_path) if config.model3d_path else bundled_model()
    )
    if config.extractor == "external":
        extractor = ExternalExtractor.from_file(config.feature_store)
    else:
        extractor = PixelExtractor()

    jobs_list = [
        (t, m) for t in manifest.templates for m in t.media
    ]
    results = _map_indexed(
        lambda tm: _prepare_one(
            tm[1], tm[0].template_id, manifest.overrides.get(tm[1].media_id), config, model
        ),
        jobs_list,
        config.jobs,
    )

    prepared_by_template: dict[str, list[PreparedMedia]] = {
        t.template_id: [] for t in manifest.templates
    }
    skips: list[SkipRecord] = []
    for (t, _m), res in zip(jobs_list, results):
        if isinstance(res, SkipRecord):
            skips.append(res)
        else:
            prepared_by_template[t.template_id].append(res)

    pooled: dict[str, object] = {}
    dropped: list[str] = []
    mode = PoolMode(config.mode)
    for t in manifest.templates:
        prepared = prepared_by_template[t.template_id]
        if not prepared:
            dropped.append(t.template_id)
            continue
        pt = pool_template(t, prepared, mode, seed=config.seed)
        rasters = {pm.media_id: pm.aligned.raster for pm in prepared}
        try:
            pooled[t.template_id] = embed_pooled(pt, extractor, member_rasters=rasters)
        except FacepoolError as e:
            dropped.append(t.template_id)
            skips.append(SkipRecord("", t.template_id, "embed", str(e)))

    log = RunLog(
        total_media=manifest.media_count(),
        processed=sum(len(v) for v in prepared_by_template.values()),
        skips=tuple(skips),
        dropped_templates=tuple(dropped),
    )

    by_subject = {t.template_id: t.subject_id for t in manifest.templates}

    genuine: list[float] | None = None
    impostor: list[float] | None = None
    usable_pairs = [(a, b, g) for a, b, g in protocol.pairs if a in pooled and b in pooled]
    if usable_pairs:
        sims = _map_indexed(
            lambda ab: template_similarity(pooled[ab[0]], pooled[ab[1]], config.betas),
            [(a, b) for a, b, _ in usable_pairs],
            config.jobs,
        )
        genuine = [s for (_, _, g), s in zip(usable_pairs, sims) if g]
        impostor = [s for (_, _, g), s in zip(usable_pairs, sims) if not g]
        if not genuine or not impostor:
            # a one-sided pair list cannot anchor an ROC
            genuine = impostor = None

    id_scores = None
    probe_subjects = gallery_subjects = None
    gal = [tid for tid in protocol.gallery if tid in pooled]
    prb = [tid for tid in protocol.probes if tid in pooled]
    if gal and prb:
        rows = _map_indexed(
            lambda p: np.asarray(
                [template_similarity(pooled[p], pooled[gid], config.betas) for gid in gal]
            ),
            prb,
            config.jobs,
        )
        id_scores = np.stack(rows)
        probe_subjects = [by_subject[p] for p in prb]
        gallery_subjects = [by_subject[g] for g in gal]

    # size statistics count matchable units: entries of the pooled templates
    gallery_sizes = [len(pooled[g].entries) for g in gal] if gal else None
    probe_sizes = [len(pooled[p].entries) for p in prb] if prb else None
    if gallery_sizes is None and usable_pairs:
        gallery_sizes = [len(pooled[a].entries) for a, _, _ in usable_pairs]
        probe_sizes = [len(pooled[b].entries) for _, b, _ in usable_pairs]

    report = build_report(
        genuine=genuine,
        impostor=impostor,
        id_scores=id_scores,
        probe_subjects=probe_subjects,
        gallery_subjects=gallery_subjects,
        gallery_sizes=gallery_sizes,
        probe_sizes=probe_sizes,
    )
    return PipelineResult(report=report, log=log, pooled=pooled)
