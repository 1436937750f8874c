"""Self-contained synthetic face benchmark.

Generates a small labeled dataset with the failure modes the pipeline is
built around: in-plane rotation and scale (undone by alignment), a yaw label
per media that parallax-shifts the subject's identity texture (so media from
different yaw ranges genuinely disagree), and blur/noise tiers that spread
the quality score. Identity lives entirely in a per-subject procedural
texture; the face structure is shared, so pooling across yaw smears exactly
the evidence that tells subjects apart.

Every byte of the output is a pure function of (subjects, media budget,
seed).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import save_image_u8
from .pose import CameraModel, bundled_model, project_points
from .ingestion import (
    Manifest,
    MediaOverrides,
    Protocol,
    save_manifest,
    save_protocol,
)
from .core import FaceMedia, Template

__all__ = ["synth_benchmark", "CANVAS"]

CANVAS = 160
_MARGIN = 40  # texture canvas overhang, must exceed the largest yaw shift
_YAW_LIMIT = 75.0
_YAW_SHIFT_FULL = 40.0  # px of texture parallax at |yaw| = 90
_STRUCT_SHIFT_FULL = 18.0  # px the inner features drift at |yaw| = 90
_BLUR_TIERS = (0.0, 0.0, 0.9, 1.8, 3.0)
_NOISE_TIERS = (0.0, 0.015, 0.05)


def _canonical_layout() -> np.ndarray:
    """Project the bundled head model to the canvas with a fixed camera."""
    model = bundled_model()
    cam = CameraModel(focal_px=2 * CANVAS, principal_point=(CANVAS / 2, CANVAS / 2))
    return project_points(
        model.points, np.eye(3), np.array([0.0, 0.0, 5.0]), cam
    )


_BLOB_SIGMA = 12.0
_BLOB_SITES = [
    (float(12 + gx * 28), float(14 + gy * 30)) for gy in range(5) for gx in range(7)
]


def _one_texture(rng: np.random.Generator, ys, xs) -> np.ndarray:
    """Signed-amplitude blobs on a lattice shared by all subjects.

    A shared dictionary keeps impostor correlations honestly non-zero, so
    ranking has to rely on how well the pooled images preserve each
    subject's amplitude pattern. The fine stripes are below the matcher's
    resolution and exist only so blur has something to measurably remove.
    """
    tex = np.zeros(xs.shape)
    for cx, cy in _BLOB_SITES:
        amp = rng.uniform(0.55, 1.0) * rng.choice([-1.0, 1.0])
        tex += amp * np.exp(
            -((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * _BLOB_SIGMA * _BLOB_SIGMA)
        )
    for _ in range(2):
        lam = rng.uniform(5.0, 10.0)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.08, 0.16)
        f = 2 * np.pi / lam
        tex += amp * np.sin(f * (np.cos(theta) * xs + np.sin(theta) * ys) + phase)
    return np.clip(tex, -1.2, 1.2)


def _subject_texture(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Frontal and profile identity textures on an extended canvas.

    The rendered face blends the two by yaw, so views from different yaw
    ranges show genuinely different surface detail, the way a turning head
    reveals parts the frontal view forshortens. The coarse components carry
    identity; the fine stripes only exist to give blur something to destroy.
    """
    w = CANVAS + 2 * _MARGIN
    ys, xs = np.mgrid[0:CANVAS, 0:w]
    xs = xs - float(_MARGIN)
    return _one_texture(rng, ys, xs), _one_texture(rng, ys, xs)


def _disk(ys, xs, cx, cy, r):
    return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r


def _ellipse(ys, xs, cx, cy, rx, ry):
    return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0


def _render_canonical(layout: np.ndarray, textures, yaw_deg: float) -> np.ndarray:
    """Draw the face in the canonical frame with yaw-dependent texture.

    Texture depends on |yaw| (a mirrored parallax shift plus a blend toward
    the profile texture), so media within one pose bin agree and media from
    different bins genuinely do not.
    """
    ys, xs = np.mgrid[0:CANVAS, 0:CANVAS]
    img = 0.20 + 0.08 * ys / CANVAS

    tex_a, tex_b = textures
    shift = int(round(_YAW_SHIFT_FULL * abs(yaw_deg) / 90.0))
    phi = min(1.0, abs(yaw_deg) / _YAW_LIMIT) * (np.pi / 2.0)
    sl = slice(_MARGIN + shift, _MARGIN + shift + CANVAS)
    tex = np.cos(phi) * tex_a[:, sl] + np.sin(phi) * tex_b[:, sl]

    cx, cy = CANVAS / 2, layout[:, 1].mean()
    head = _ellipse(ys, xs, cx, cy + 4, 54, 64)
    img = np.where(head, np.clip(0.52 + 0.40 * tex, 0.03, 0.97), img)

    # the inner features drift sideways with |yaw| while the landmarks keep
    # their similarity-frame positions: out-of-plane parallax that in-plane
    # alignment cannot undo, so averaging across pose bins ghosts them
    dx = _STRUCT_SHIFT_FULL * abs(yaw_deg) / 90.0
    le = layout[36:42].mean(axis=0)
    re = layout[42:48].mean(axis=0)
    for eye in (le, re):
        img = np.where(_disk(ys, xs, eye[0] + dx, eye[1], 5.5), 0.10, img)
    for sl in (slice(17, 22), slice(22, 27)):
        b = layout[sl]
        img = np.where(
            _ellipse(ys, xs, b[:, 0].mean() + dx, b[:, 1].mean(), 12, 2.5), 0.22, img
        )
    nose = layout[27:34]
    img = np.where(
        (np.abs(xs - cx - dx) <= 1.5)
        & (ys >= nose[:, 1].min())
        & (ys <= nose[:, 1].max()),
        0.42,
        img,
    )
    mouth = layout[48:68]
    img = np.where(
        _ellipse(ys, xs, mouth[:, 0].mean() + dx, mouth[:, 1].mean(), 16, 5), 0.25, img
    )
    return img.astype(np.float32)


def _similarity_warp(img: np.ndarray, roll_deg: float, scale: float, shift):
    """Forward-warp by a similarity about the canvas center."""
    from ._kernels import warp_affine_bilinear

    beta = np.deg2rad(roll_deg)
    cb, sb = np.cos(beta), np.sin(beta)
    c = CANVAS / 2.0
    dx, dy = shift
    # inverse map (output pixel -> source pixel)
    a = cb / scale
    b = sb / scale
    cc = -sb / scale
    d = cb / scale
    tx = c - a * (c + dx) - b * (c + dy)
    ty = c - cc * (c + dx) - d * (c + dy)
    return warp_affine_bilinear(
        np.ascontiguousarray(img, dtype=np.float32), (a, b, tx, cc, d, ty), CANVAS, CANVAS
    )


def _warp_points(pts: np.ndarray, roll_deg: float, scale: float, shift) -> np.ndarray:
    beta = np.deg2rad(roll_deg)
    cb, sb = np.cos(beta), np.sin(beta)
    c = CANVAS / 2.0
    rel = pts - c
    out = np.empty_like(pts)
    out[:, 0] = scale * (cb * rel[:, 0] - sb * rel[:, 1]) + c + shift[0]
    out[:, 1] = scale * (sb * rel[:, 0] + cb * rel[:, 1]) + c + shift[1]
    return out


def _template_sizes(rng: np.random.Generator, budget: int) -> tuple[int, int]:
    n_g = int(np.clip(np.rint(rng.lognormal(np.log(budget), 0.5)), 2, 4 * budget))
    n_p = int(np.clip(np.rint(rng.lognormal(np.log(max(2.0, budget / 2.0)), 0.5)), 1, 2 * budget))
    return n_g, n_p


def synth_benchmark(
    out_dir,
    n_subjects: int = 50,
    media_per_template: int = 8,
    seed: int = 0,
) -> tuple[Path, Path]:
    """Write images, manifest, protocol and ground truth; returns their paths.

    Each subject gets one gallery and one probe template with lognormal
    media counts around the budget. The protocol pairs every probe template
    with every gallery template (one genuine pair per subject) and uses the
    same split for closed-set identification.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    layout = _canonical_layout()

    templates = []
    overrides: dict[str, MediaOverrides] = {}
    truth: dict[str, dict] = {}

    for sidx in range(n_subjects):
        sid = f"s{sidx:03d}"
        textures = _subject_texture(np.random.default_rng([seed, sidx]))
        size_rng = np.random.default_rng([seed, sidx, 9])
        n_g, n_p = _template_sizes(size_rng, media_per_template)

        # gallery media sample yaw broadly (stills from many sources); probe
        # media cluster around one head range, like frames of a single clip
        probe_center = float(np.random.default_rng([seed, sidx, 8]).uniform(-65.0, 65.0))

        for kind_idx, (prefix, count) in enumerate((("g", n_g), ("p", n_p))):
            tid = f"{prefix}{sidx:03d}"
            media = []
            for j in range(count):
                mid = f"{tid}_m{j:02d}"
                rng = np.random.default_rng([seed, sidx, kind_idx, j])
                if kind_idx == 0:
                    yaw = float(rng.uniform(-_YAW_LIMIT, _YAW_LIMIT))
                else:
                    yaw = float(
                        np.clip(probe_center + rng.uniform(-12.0, 12.0), -_YAW_LIMIT, _YAW_LIMIT)
                    )
                roll = float(rng.uniform(-20.0, 20.0))
                scale = float(rng.uniform(0.85, 1.15))
                shift = (float(rng.uniform(-6, 6)), float(rng.uniform(-6, 6)))
                blur = float(rng.choice(_BLUR_TIERS))
                noise = float(rng.choice(_NOISE_TIERS))

                img = _render_canonical(layout, textures, yaw)
                img = _similarity_warp(img, roll, scale, shift)
                if blur > 0:
                    img = gaussian_filter(img, blur, mode="nearest")
                if noise > 0:
                    img = img + rng.normal(0.0, noise, img.shape).astype(np.float32)
                img = np.clip(img, 0.0, 1.0).astype(np.float32)
                lm = _warp_points(layout, roll, scale, shift)

                rel = f"images/{mid}.png"
                save_image_u8(out / rel, img)
                media.append(
                    FaceMedia(
                        media_id=mid,
                        image=img,
                        landmarks=lm,
                        media_kind="still" if rng.uniform() < 0.7 else "frame",
                        source_path=rel,
                    )
                )
                overrides[mid] = MediaOverrides(yaw_deg=yaw)
                truth[mid] = {
                    "subject": sid,
                    "yaw_deg": yaw,
                    "roll_deg": roll,
                    "scale": scale,
                    "shift_px": list(shift),
                    "blur_sigma": blur,
                    "noise_sigma": noise,
                }
            templates.append(Template(template_id=tid, subject_id=sid, media=tuple(media)))

    manifest = Manifest(templates=tuple(templates), overrides=overrides)
    manifest_path = out / "manifest.json"
    save_manifest(manifest, manifest_path)

    gallery = tuple(f"g{idx:03d}" for idx in range(n_subjects))
    probes = tuple(f"p{idx:03d}" for idx in range(n_subjects))
    pairs = tuple(
        (g, p, g[1:] == p[1:]) for g in gallery for p in probes
    )
    protocol_path = out / "protocol.json"
    save_protocol(Protocol(pairs=pairs, gallery=gallery, probes=probes), protocol_path)

    with open(out / "groundtruth.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "params": {
                    "n_subjects": n_subjects,
                    "media_per_template": media_per_template,
                    "seed": seed,
                },
                "media": truth,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    return manifest_path, protocol_path
