"""Binning and per-bin pooling."""

import numpy as np
import pytest

from facepool.core import BinKey, FaceMedia, Template
from facepool.pooling import (
    EmptyBin,
    EmptyTemplate,
    PoolMode,
    PreparedMedia,
    ShapeMismatch,
    assign_bin,
    bin_template,
    pool_bin,
    pool_template,
)
from facepool.pose import AlignedFace, HeadPose, compose_rotation
from facepool.quality import QualityScore, quantize_quality
from conftest import grid_landmarks


def naive_mean(rasters):
    """Double loop over pixels, the definition of the per-pixel average."""
    out = np.zeros_like(rasters[0], dtype=np.float64)
    h, w = out.shape
    for y in range(h):
        for x in range(w):
            s = 0.0
            for r in rasters:
                s += float(r[y, x])
            out[y, x] = s / len(rasters)
    return out


class TestPoolBin:
    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(2, 17))
            rasters = [rng.random((6, 5)).astype(np.float32) for _ in range(n)]
            got = pool_bin(rasters)
            np.testing.assert_allclose(got, naive_mean(rasters), atol=1e-6)
            assert got.dtype == np.float32

    def test_permutation_invariant_bitwise(self):
        rng = np.random.default_rng(1)
        rasters = [rng.random((8, 8)).astype(np.float32) for _ in range(7)]
        a = pool_bin(rasters)
        order = rng.permutation(7)
        b = pool_bin([rasters[i] for i in order])
        assert np.array_equal(a, b)

    def test_idempotent_exact(self):
        r = np.random.default_rng(2).random((8, 8)).astype(np.float32)
        assert np.array_equal(pool_bin([r, r, r]), r)
        assert np.array_equal(pool_bin([pool_bin([r])]), r)

    def test_linear_in_inputs(self):
        rng = np.random.default_rng(3)
        a, b = rng.random((4, 4)), rng.random((4, 4))
        np.testing.assert_allclose(pool_bin([a, b]), (a + b) / 2.0, atol=1e-7)

    def test_median_reducer(self):
        stack = [np.full((2, 2), v, dtype=np.float32) for v in (0.0, 0.1, 1.0)]
        assert np.all(pool_bin(stack, reducer="median") == np.float32(0.1))

    def test_empty_raises(self):
        with pytest.raises(EmptyBin):
            pool_bin([])

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeMismatch):
            pool_bin([np.zeros((4, 4)), np.zeros((4, 5))])

    def test_unknown_reducer(self):
        with pytest.raises(ValueError):
            pool_bin([np.zeros((2, 2))], reducer="max")


def _prepared(media_id, yaw=0.0, score=0.9, fill=None):
    raster = np.full((16, 16), 0.5 if fill is None else fill, dtype=np.float32)
    pose = HeadPose(compose_rotation(yaw, 0.0, 0.0), np.zeros(3), yaw, 0.0, 0.0)
    aligned = AlignedFace(raster=raster, pose=pose, media_id=media_id)
    quality = QualityScore(score=score, quality_bin=quantize_quality(score))
    return PreparedMedia(
        media_id=media_id, aligned=aligned, quality=quality, bin_key=assign_bin(aligned, quality)
    )


def _template(prepared):
    lm = grid_landmarks(16, 16)
    media = tuple(
        FaceMedia(pm.media_id, np.zeros((16, 16), np.float32), lm) for pm in prepared
    )
    return Template("t0", "s0", media)


class TestAssignBin:
    def test_combines_yaw_and_quality(self):
        pm = _prepared("m", yaw=-45.0, score=0.6)
        assert pm.bin_key == BinKey(2, 2)

    def test_custom_yaw_edges(self):
        pm = _prepared("m", yaw=25.0)
        key = assign_bin(pm.aligned, pm.quality, yaw_edges=(30.0, 60.0))
        assert key.pose_bin == 0

    def test_bin_template_groups(self):
        ps = [_prepared("a", 0.0, 0.9), _prepared("b", 0.0, 0.9), _prepared("c", 70.0, 0.2)]
        binned = bin_template(ps)
        assert {str(k) for k in binned} == {"04", "30"}
        assert [pm.media_id for pm in binned[BinKey(0, 4)]] == ["a", "b"]


class TestPoolTemplate:
    def test_all_images_one_entry_per_media(self):
        ps = [_prepared(m) for m in ("b", "a", "c")]
        pooled = pool_template(_template(ps), ps, PoolMode.all_images)
        assert [e.entry_id for e in pooled.entries] == ["a", "b", "c"]
        assert all(e.key is None and e.member_count == 1 for e in pooled.entries)

    def test_single_image_pools_everything(self):
        ps = [_prepared("a", fill=0.2), _prepared("b", fill=0.8)]
        pooled = pool_template(_template(ps), ps, PoolMode.single_image)
        assert len(pooled) == 1
        e = pooled.entries[0]
        assert e.entry_id == "t0/all"
        assert e.member_ids == ("a", "b")
        np.testing.assert_allclose(e.image, 0.5, atol=1e-7)

    def test_single_feature_has_no_image(self):
        ps = [_prepared("a"), _prepared("b")]
        pooled = pool_template(_template(ps), ps, PoolMode.single_feature)
        assert pooled.entries[0].image is None
        assert pooled.entries[0].member_count == 2

    def test_image_per_bin_structure(self):
        ps = [
            _prepared("a", 0.0, 0.9, fill=0.0),
            _prepared("b", 0.0, 0.9, fill=1.0),
            _prepared("c", 70.0, 0.2, fill=0.3),
        ]
        pooled = pool_template(_template(ps), ps, PoolMode.image_per_bin)
        by_bin = pooled.by_bin()
        assert set(str(k) for k in by_bin) == {"04", "30"}
        np.testing.assert_allclose(by_bin[BinKey(0, 4)].image, 0.5, atol=1e-7)
        assert by_bin[BinKey(0, 4)].entry_id == "t0/04"
        assert pooled.member_total == 3

    def test_member_counts_partition_template(self):
        rng = np.random.default_rng(10)
        ps = [
            _prepared(f"m{i:02d}", rng.uniform(-80, 80), rng.uniform(0, 1))
            for i in range(12)
        ]
        for mode in PoolMode:
            pooled = pool_template(_template(ps), ps, mode)
            assert pooled.member_total == 12, mode

    def test_permutation_invariance_bitwise(self):
        rng = np.random.default_rng(11)
        ps = [
            _prepared(f"m{i:02d}", rng.uniform(-80, 80), rng.uniform(0, 1), rng.random())
            for i in range(9)
        ]
        t = _template(ps)
        for mode in PoolMode:
            a = pool_template(t, ps, mode)
            b = pool_template(t, list(reversed(ps)), mode)
            assert [e.entry_id for e in a.entries] == [e.entry_id for e in b.entries]
            for ea, eb in zip(a.entries, b.entries):
                assert ea.member_ids == eb.member_ids
                if ea.image is not None:
                    assert np.array_equal(ea.image, eb.image)

    def test_random_per_bin_is_seeded_and_member_complete(self):
        ps = [_prepared(f"m{i}", 0.0, 0.9, fill=i / 10.0) for i in range(5)]
        t = _template(ps)
        a = pool_template(t, ps, PoolMode.random_per_bin, seed=1)
        b = pool_template(t, ps, PoolMode.random_per_bin, seed=1)
        c = pool_template(t, ps, PoolMode.random_per_bin, seed=2)
        assert np.array_equal(a.entries[0].image, b.entries[0].image)
        # the pick is one member's raster but the entry still records the bin
        assert a.entries[0].member_ids == tuple(f"m{i}" for i in range(5))
        picks = {
            float(pool_template(t, ps, PoolMode.random_per_bin, seed=s).entries[0].image[0, 0])
            for s in range(20)
        }
        assert len(picks) > 1  # different seeds reach different members
        assert float(c.entries[0].image[0, 0]) in {i / 10.0 for i in range(5)}

    def test_unknown_media_rejected(self):
        ps = [_prepared("a")]
        t = _template(ps)
        stray = [_prepared("zz")]
        with pytest.raises(ValueError, match="zz"):
            pool_template(t, stray, PoolMode.all_images)

    def test_empty_prepared_raises(self):
        ps = [_prepared("a")]
        with pytest.raises(EmptyTemplate):
            pool_template(_template(ps), [], PoolMode.all_images)

    def test_mode_accepts_strings(self):
        ps = [_prepared("a")]
        pooled = pool_template(_template(ps), ps, "single_image")
        assert pooled.mode == "single_image"
