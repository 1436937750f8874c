"""Shared fixtures: a small synthetic dataset reused across test modules."""

import numpy as np
import pytest

from facepool.ingestion import load_manifest, load_protocol
from facepool.synth import synth_benchmark


def grid_landmarks(h: int, w: int) -> np.ndarray:
    """68 points laid out on a grid inside an h-by-w raster."""
    xs = np.linspace(0.2 * w, 0.8 * w, 17)
    ys = np.linspace(0.25 * h, 0.75 * h, 4)
    pts = np.array([(x, y) for y in ys for x in xs])
    return pts


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """An 8-subject dataset small enough to run per-test pipelines on."""
    out = tmp_path_factory.mktemp("synth_small")
    manifest_path, protocol_path = synth_benchmark(
        out, n_subjects=8, media_per_template=6, seed=11
    )
    manifest = load_manifest(manifest_path)
    protocol = load_protocol(protocol_path, manifest)
    return manifest, protocol, manifest_path, protocol_path
