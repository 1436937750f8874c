"""Command line interface.

Subcommands mirror the pipeline stages so each piece can be run and
inspected on its own: synth, pose, quality, pool, match, eval, and run for
the whole thing. Exit status is 0 on success, 1 when processing fails and 2
for bad usage.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import FacepoolError, save_image_u8
from .embedding import read_feature_store, write_feature_store
from .evaluation import build_report, write_report
from .ingestion import (
    PipelineConfig,
    load_manifest,
    load_protocol,
    run_pipeline,
)
from .matching import template_similarity
from .pooling import PoolMode
from .pose import CameraModel, Model3D, bundled_model, default_camera, solve_pnp
from .quality import quality_score
from .synth import synth_benchmark

_MODES = [m.value for m in PoolMode]


def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    if "manifest" in names:
        p.add_argument("--manifest", required=True, help="manifest JSON path")
    if "protocol" in names:
        p.add_argument("--protocol", required=True, help="protocol JSON path")
    if "config" in names:
        p.add_argument("--config", help="pipeline config JSON path")
    if "out" in names:
        p.add_argument("--out", help="output file or directory")
    if "mode" in names:
        p.add_argument("--mode", choices=_MODES, help="pooling mode")
    if "extractor" in names:
        p.add_argument("--extractor", choices=["pixels", "external"], help="feature extractor")
        p.add_argument("--feature-store", help="feature store for the external extractor")
    if "seed" in names:
        p.add_argument("--seed", type=int, help="seed for randomized pooling")
    if "jobs" in names:
        p.add_argument("--jobs", type=int, help="worker threads")


def _build_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if getattr(args, "config", None) else PipelineConfig()
    updates = {}
    for flag, field in (
        ("mode", "mode"),
        ("extractor", "extractor"),
        ("feature_store", "feature_store"),
        ("seed", "seed"),
        ("jobs", "jobs"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            updates[field] = v
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _open_out(path: str | None):
    if path is None:
        return sys.stdout
    return open(path, "w", encoding="utf-8")


def _cmd_synth(args) -> int:
    manifest, protocol = synth_benchmark(
        args.out,
        n_subjects=args.subjects,
        media_per_template=args.media_per_template,
        seed=args.seed if args.seed is not None else 0,
    )
    print(manifest)
    print(protocol)
    return 0


def _cmd_pose(args) -> int:
    config = _build_config(args)
    manifest = load_manifest(args.manifest)
    model = (
        Model3D.from_file(config.model3d_path) if config.model3d_path else bundled_model()
    )
    fh = _open_out(args.out)
    try:
        fh.write("media_id\tyaw_deg\tpitch_deg\troll_deg\treproj_rmse\n")
        for t in manifest.templates:
            for m in t.media:
                h, w = m.image.shape[:2]
                cam = default_camera(w, h)
                if config.focal_px is not None:
                    cam = CameraModel(config.focal_px, cam.principal_point)
                pose = solve_pnp(m.landmarks, model, cam)
                fh.write(
                    f"{m.media_id}\t{pose.yaw_deg!r}\t{pose.pitch_deg!r}"
                    f"\t{pose.roll_deg!r}\t{pose.reproj_rmse!r}\n"
                )
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _cmd_quality(args) -> int:
    config = _build_config(args)
    manifest = load_manifest(args.manifest)
    fh = _open_out(args.out)
    try:
        fh.write("media_id\tscore\tbin\n")
        for t in manifest.templates:
            for m in t.media:
                q = quality_score(m.image, config.quality_bin_edges)
                fh.write(f"{m.media_id}\t{q.score!r}\t{q.quality_bin}\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _pool_everything(manifest, config):
    """Run the preprocessing and pooling stages only."""
    from .ingestion import PipelineResult, Protocol, run_pipeline  # noqa: F401
    from .ingestion import _prepare_one  # shared stage logic
    from .pooling import pool_template

    model = (
        Model3D.from_file(config.model3d_path) if config.model3d_path else bundled_model()
    )
    pooled = {}
    skipped = []
    for t in manifest.templates:
        prepared = []
        for m in t.media:
            res = _prepare_one(
                m, t.template_id, manifest.overrides.get(m.media_id), config, model
            )
            if hasattr(res, "reason"):
                skipped.append(res)
            else:
                prepared.append(res)
        if prepared:
            pooled[t.template_id] = pool_template(
                t, prepared, PoolMode(config.mode), seed=config.seed
            )
    return pooled, skipped


def _cmd_pool(args) -> int:
    if args.out is None:
        print("error: pool needs --out DIR", file=sys.stderr)
        return 2
    config = _build_config(args)
    manifest = load_manifest(args.manifest)
    pooled, skipped = _pool_everything(manifest, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = {"mode": config.mode, "templates": {}}
    for tid in sorted(pooled):
        entries = []
        for e in pooled[tid].entries:
            fname = None
            if e.image is not None:
                fname = e.entry_id.replace("/", "_") + ".png"
                save_image_u8(out / fname, e.image)
            entries.append(
                {
                    "entry_id": e.entry_id,
                    "file": fname,
                    "bin": None if e.key is None else str(e.key),
                    "member_ids": list(e.member_ids),
                    "member_count": e.member_count,
                }
            )
        index["templates"][tid] = entries
    index["skipped"] = [
        {"media_id": s.media_id, "template_id": s.template_id, "stage": s.stage, "reason": s.reason}
        for s in skipped
    ]
    with open(out / "index.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(out / "index.json")
    return 0


def _cmd_match(args) -> int:
    config = _build_config(args)
    manifest = load_manifest(args.manifest)
    protocol = load_protocol(args.protocol, manifest)
    result = run_pipeline(manifest, protocol, config)
    pooled = result.pooled
    fh = _open_out(args.out)
    try:
        fh.write("a\tb\tgenuine\tscore\n")
        for a, b, g in protocol.pairs:
            if a not in pooled or b not in pooled:
                continue
            s = template_similarity(pooled[a], pooled[b], config.betas)
            fh.write(f"{a}\t{b}\t{int(g)}\t{s!r}\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    if args.matrix_out:
        gal = [tid for tid in protocol.gallery if tid in pooled]
        prb = [tid for tid in protocol.probes if tid in pooled]
        if gal and prb:
            rows = [
                [template_similarity(pooled[p], pooled[g], config.betas) for g in gal]
                for p in prb
            ]
            write_feature_store(args.matrix_out, prb, np.asarray(rows, dtype=np.float32))
            with open(args.matrix_out + ".cols.json", "w", encoding="utf-8") as cfh:
                json.dump({str(i): g for i, g in enumerate(gal)}, cfh, indent=2, sort_keys=True)
                cfh.write("\n")
    return 0


def _cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    protocol = load_protocol(args.protocol, manifest)
    genuine, impostor = [], []
    with open(args.scores, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("a\tb\tgenuine\tscore"):
            print(f"error: {args.scores} is not a match score table", file=sys.stderr)
            return 1
        for lineno, line in enumerate(fh, start=2):
            try:
                a, b, g, s = line.rstrip("\n").split("\t")
                (genuine if g == "1" else impostor).append(float(s))
            except ValueError:
                print(f"error: {args.scores} line {lineno}: bad score row", file=sys.stderr)
                return 1
    by_subject = {t.template_id: t.subject_id for t in manifest.templates}
    by_size = {t.template_id: len(t.media) for t in manifest.templates}

    id_scores = probe_subjects = gallery_subjects = None
    if args.matrix:
        prb, matrix = read_feature_store(args.matrix)
        with open(args.matrix + ".cols.json", "r", encoding="utf-8") as cfh:
            cols = json.load(cfh)
        gal = [cols[str(i)] for i in range(matrix.shape[1])]
        id_scores = matrix
        probe_subjects = [by_subject[p] for p in prb]
        gallery_subjects = [by_subject[g] for g in gal]
        gallery_sizes = [by_size[g] for g in gal]
        probe_sizes = [by_size[p] for p in prb]
    else:
        gallery_sizes = [by_size[g] for g in protocol.gallery] or None
        probe_sizes = [by_size[p] for p in protocol.probes] or None

    report = build_report(
        genuine=genuine or None,
        impostor=impostor or None,
        id_scores=id_scores,
        probe_subjects=probe_subjects,
        gallery_subjects=gallery_subjects,
        gallery_sizes=gallery_sizes,
        probe_sizes=probe_sizes,
    )
    out = args.out or "."
    write_report(report, out)
    print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_run(args) -> int:
    config = _build_config(args)
    manifest = load_manifest(args.manifest)
    protocol = load_protocol(args.protocol, manifest)
    result = run_pipeline(manifest, protocol, config)
    out = Path(args.out or ".")
    write_report(result.report, out)
    with open(out / "run_log.json", "w", encoding="utf-8") as fh:
        json.dump(result.log.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.keep_artifacts:
        art = out / "pooled"
        art.mkdir(parents=True, exist_ok=True)
        for tid in sorted(result.pooled):
            for e in result.pooled[tid].entries:
                if e.image is not None:
                    save_image_u8(art / (e.entry_id.replace("/", "_") + ".png"), e.image)
    print(json.dumps(result.report.to_json_dict(), indent=2, sort_keys=True))
    if not result.log.reconciles():  # pragma: no cover - internal invariant
        print("error: run log does not reconcile", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="facepool",
        description="template face recognition with pooled face images",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled benchmark")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--subjects", type=int, default=50)
    p.add_argument("--media-per-template", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("pose", help="estimate head pose per media")
    _add_common(p, "manifest", "config", "out")
    p.set_defaults(fn=_cmd_pose)

    p = sub.add_parser("quality", help="score image quality per media")
    _add_common(p, "manifest", "config", "out")
    p.set_defaults(fn=_cmd_quality)

    p = sub.add_parser("pool", help="pool each template and export the artifacts")
    _add_common(p, "manifest", "config", "out", "mode", "seed")
    p.set_defaults(fn=_cmd_pool)

    p = sub.add_parser("match", help="score protocol pairs")
    _add_common(p, "manifest", "protocol", "config", "out", "mode", "extractor", "seed", "jobs")
    p.add_argument("--matrix-out", help="also write the probe x gallery score matrix")
    p.set_defaults(fn=_cmd_match)

    p = sub.add_parser("eval", help="compute metrics from match scores")
    _add_common(p, "manifest", "protocol", "out")
    p.add_argument("--scores", required=True, help="TSV written by the match command")
    p.add_argument("--matrix", help="score matrix written by match --matrix-out")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("run", help="full pipeline: pose, pool, match, evaluate")
    _add_common(p, "manifest", "protocol", "config", "out", "mode", "extractor", "seed", "jobs")
    p.add_argument(
        "--keep-artifacts", action="store_true", help="also write pooled entry images"
    )
    p.set_defaults(fn=_cmd_run)
    return ap


def main(argv=None) -> int:
    """Exit status: 0 success, 1 input validation failure, 2 processing failure."""
    from .ingestion import IngestionError

    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (IngestionError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FacepoolError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
