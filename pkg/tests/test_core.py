"""Value types and 8-bit raster conversions."""

import numpy as np
import pytest

from facepool.core import (
    ALL_BIN_KEYS,
    BinKey,
    FaceMedia,
    FeatureVector,
    PooledEntry,
    PooledTemplate,
    Template,
    from_u8,
    load_image,
    quantize_u8,
    save_image_u8,
    to_gray,
)
from conftest import grid_landmarks


class TestRasterConversion:
    def test_u8_round_half_up(self):
        # 127.5/255 sits exactly on the midpoint and must round up
        vals = np.array([0.0, 127.4999 / 255.0, 127.5 / 255.0, 1.0])
        assert quantize_u8(vals).tolist() == [0, 127, 128, 255]

    def test_u8_clips_out_of_range(self):
        assert quantize_u8(np.array([-0.2, 1.3])).tolist() == [0, 255]

    def test_u8_round_trip_exact_all_levels(self):
        raw = np.arange(256, dtype=np.uint8)
        assert np.array_equal(quantize_u8(from_u8(raw)), raw)

    def test_from_u8_is_float32_readonly(self):
        out = from_u8(np.array([[0, 255]], dtype=np.uint8))
        assert out.dtype == np.float32
        assert not out.flags.writeable

    def test_gray_passthrough(self):
        img = np.random.default_rng(0).random((4, 4))
        assert np.array_equal(to_gray(img), img)

    def test_gray_uses_luma_weights(self):
        # pure channels map to their BT.601 coefficients
        red = np.zeros((2, 2, 3))
        red[..., 0] = 1.0
        green = np.zeros((2, 2, 3))
        green[..., 1] = 1.0
        blue = np.zeros((2, 2, 3))
        blue[..., 2] = 1.0
        assert to_gray(red)[0, 0] == pytest.approx(0.299)
        assert to_gray(green)[0, 0] == pytest.approx(0.587)
        assert to_gray(blue)[0, 0] == pytest.approx(0.114)
        white = np.ones((2, 2, 3))
        assert to_gray(white)[0, 0] == pytest.approx(1.0)

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        img = from_u8(quantize_u8(rng.random((16, 16))))
        p = tmp_path / "x.png"
        save_image_u8(p, img)
        assert np.array_equal(load_image(p), img)

    def test_load_image_rgb(self, tmp_path):
        from PIL import Image

        raw = np.random.default_rng(4).integers(0, 256, (8, 8, 3), dtype=np.uint8)
        p = tmp_path / "c.png"
        Image.fromarray(raw).save(p)
        out = load_image(p)
        assert out.shape == (8, 8, 3)
        np.testing.assert_allclose(out, raw / 255.0, atol=1e-7)


def _media(media_id="m0", h=32, w=32, landmarks=None, **kw):
    img = np.zeros((h, w), dtype=np.float32)
    if landmarks is None:
        landmarks = grid_landmarks(h, w)
    return FaceMedia(media_id=media_id, image=img, landmarks=landmarks, **kw)


class TestFaceMedia:
    def test_basic_fields(self):
        m = _media()
        assert m.height == 32 and m.width == 32
        assert m.image.dtype == np.float32
        assert not m.image.flags.writeable
        assert m.landmarks.shape == (68, 2)

    def test_rejects_wrong_landmark_count(self):
        with pytest.raises(ValueError, match="68"):
            _media(landmarks=np.zeros((67, 2)))

    def test_rejects_far_landmarks_names_media(self):
        lm = grid_landmarks(32, 32)
        lm = lm.copy()
        lm[0] = (500.0, 500.0)
        with pytest.raises(ValueError, match="m0"):
            _media(landmarks=lm)

    def test_nan_rows_mark_failed_detections(self):
        # missing detections are allowed and must not trip the range check
        lm = grid_landmarks(32, 32).copy()
        lm[10] = (np.nan, np.nan)
        m = _media(landmarks=lm)
        assert np.isnan(m.landmarks[10]).all()

    def test_slight_overshoot_tolerated(self):
        lm = grid_landmarks(32, 32).copy()
        lm[0] = (-10.0, -10.0)
        _media(landmarks=lm)

    def test_rejects_tiny_image(self):
        with pytest.raises(ValueError, match="small"):
            _media(h=4, w=4)

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError, match="media_kind"):
            _media(media_kind="video")

    def test_frame_kind_accepted(self):
        assert _media(media_kind="frame").media_kind == "frame"


class TestTemplate:
    def test_len(self):
        t = Template("t0", "s0", (_media("a"), _media("b")))
        assert len(t) == 2

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="no media"):
            Template("t0", "s0", ())

    def test_rejects_duplicate_media(self):
        with pytest.raises(ValueError, match="duplicate"):
            Template("t0", "s0", (_media("a"), _media("a")))


class TestBinKey:
    def test_str(self):
        assert str(BinKey(2, 4)) == "24"

    def test_ordering_lexicographic(self):
        assert BinKey(0, 4) < BinKey(1, 0)
        assert BinKey(1, 2) < BinKey(1, 3)

    @pytest.mark.parametrize("p,q", [(-1, 0), (4, 0), (0, -1), (0, 5)])
    def test_range_checked(self, p, q):
        with pytest.raises(ValueError):
            BinKey(p, q)

    def test_all_keys_cover_grid(self):
        assert len(ALL_BIN_KEYS) == 20
        assert len(set(ALL_BIN_KEYS)) == 20
        assert list(ALL_BIN_KEYS) == sorted(ALL_BIN_KEYS)


class TestFeatureVector:
    def test_casts_to_float32(self):
        f = FeatureVector(np.arange(4, dtype=np.float64), "pixels32")
        assert f.values.dtype == np.float32
        assert f.dim == 4

    def test_rejects_empty_and_2d(self):
        with pytest.raises(ValueError):
            FeatureVector(np.zeros(0), "e")
        with pytest.raises(ValueError):
            FeatureVector(np.zeros((2, 2)), "e")

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="finite"):
            FeatureVector(np.array([1.0, np.inf]), "e")


def _entry(eid="e0", key=None, members=("a",), image=None):
    if image is None:
        image = np.ones((4, 4), dtype=np.float32)
    return PooledEntry(eid, key, image, members)


class TestPooledTemplate:
    def test_member_total_and_by_bin(self):
        t = PooledTemplate(
            "t",
            "s",
            (
                _entry("t/00", BinKey(0, 0), ("a", "b")),
                _entry("t/31", BinKey(3, 1), ("c",)),
            ),
        )
        assert t.member_total == 3
        assert set(t.by_bin()) == {BinKey(0, 0), BinKey(3, 1)}

    def test_rejects_duplicate_bins(self):
        with pytest.raises(ValueError, match="duplicate"):
            PooledTemplate(
                "t", "s", (_entry("x", BinKey(0, 0)), _entry("y", BinKey(0, 0)))
            )

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="no entries"):
            PooledTemplate("t", "s", ())

    def test_entry_needs_members(self):
        with pytest.raises(ValueError, match="member"):
            PooledEntry("e", None, np.ones((2, 2)), ())

    def test_with_features_pairs_up(self):
        t = PooledTemplate("t", "s", (_entry(), _entry("e1", members=("b",))))
        feats = [FeatureVector(np.ones(3), "x"), FeatureVector(np.zeros(3) + 2, "x")]
        out = t.with_features(feats)
        assert out.entries[1].feature.values[0] == 2.0
        with pytest.raises(ValueError):
            t.with_features(feats[:1])

    def test_npz_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        img = rng.random((8, 8)).astype(np.float32)
        t = PooledTemplate(
            "t9",
            "s9",
            (
                PooledEntry("t9/12", BinKey(1, 2), img, ("m1", "m0")),
                PooledEntry(
                    "t9/30",
                    BinKey(3, 0),
                    None,
                    ("m2",),
                    FeatureVector(rng.random(16), "pixels32"),
                ),
            ),
            mode="feature_per_bin",
        )
        p = tmp_path / "t.npz"
        t.save_npz(p)
        back = PooledTemplate.load_npz(p)
        assert back.template_id == "t9" and back.subject_id == "s9"
        assert back.mode == "feature_per_bin"
        assert back.entries[0].member_ids == ("m1", "m0")
        assert np.array_equal(back.entries[0].image, img)
        assert back.entries[0].feature is None and back.entries[1].image is None
        assert np.array_equal(
            back.entries[1].feature.values, t.entries[1].feature.values
        )
        assert back.entries[1].feature.extractor_id == "pixels32"
