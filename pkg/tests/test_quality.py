"""No-reference quality features and the scalar quality score.

The frozen constants below were computed with a separate reference
implementation (Counter-based histogram entropy, scipy dctn spectrum,
same 20th-percentile trimming) on the exact seeded inputs used here.
"""

import numpy as np
import pytest

from facepool.quality import (
    ImageTooSmall,
    QualityScore,
    quality_score,
    quantize_quality,
    sseq_features,
)
from scipy.ndimage import gaussian_filter

# uniform noise, default_rng(7).random((128, 128)), scale-1 means
UNIFORM_NOISE_SPATIAL = 5.765206337493244
UNIFORM_NOISE_SPECTRAL = 4.942717131082114


def _noise(shape=(128, 128), seed=7):
    return np.random.default_rng(seed).random(shape).astype(np.float32)


class TestSseqFeatures:
    def test_uniform_noise_matches_reference(self):
        f = sseq_features(_noise())
        assert f.spatial_mean[0] == pytest.approx(UNIFORM_NOISE_SPATIAL, abs=1e-9)
        assert f.spectral_mean[0] == pytest.approx(UNIFORM_NOISE_SPECTRAL, abs=1e-5)

    def test_uniform_noise_entropy_window(self):
        # 64-pixel blocks cap spatial entropy at 6 bits; dense noise sits
        # close below that ceiling
        f = sseq_features(_noise(seed=12))
        assert 5.5 < f.spatial_mean[0] < 6.0

    def test_constant_image_is_all_zero(self):
        f = sseq_features(np.full((64, 64), 0.4, dtype=np.float32))
        assert f.spatial_mean == (0.0, 0.0, 0.0)
        assert f.spectral_mean == (0.0, 0.0, 0.0)
        assert f.spatial_skew == (0.0, 0.0, 0.0)

    def test_checkerboard_spatial_exactly_one_bit(self):
        cb = (np.indices((64, 64)).sum(axis=0) % 2).astype(np.float32)
        f = sseq_features(cb)
        assert f.spatial_mean[0] == 1.0

    def test_three_scales_reported(self):
        f = sseq_features(_noise())
        v = f.as_vector()
        assert v.shape == (12,)
        assert len(f.spatial_mean) == len(f.spectral_mean) == 3

    def test_transpose_invariant(self):
        img = _noise(seed=3)
        a = sseq_features(img).as_vector()
        b = sseq_features(np.ascontiguousarray(img.T)).as_vector()
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_blur_reduces_both_entropies(self):
        img = _noise(seed=5)
        sharp = sseq_features(img)
        prev_spatial = sharp.spatial_mean[0]
        prev_spectral = sharp.spectral_mean[0]
        for sigma in (0.8, 1.6, 3.2):
            f = sseq_features(gaussian_filter(img, sigma, mode="nearest"))
            assert f.spatial_mean[0] < prev_spatial
            assert f.spectral_mean[0] < prev_spectral
            prev_spatial, prev_spectral = f.spatial_mean[0], f.spectral_mean[0]

    def test_rgb_equals_luma_path(self):
        # float32 rounding of the luma can flip a quantization level in a
        # block or two, so the match is close rather than exact
        rng = np.random.default_rng(8)
        rgb = rng.random((64, 64, 3)).astype(np.float32)
        from facepool.core import to_gray

        a = sseq_features(rgb).as_vector()
        b = sseq_features(to_gray(rgb).astype(np.float32)).as_vector()
        np.testing.assert_allclose(a, b, atol=1e-4)

    def test_too_small_raises(self):
        with pytest.raises(ImageTooSmall):
            sseq_features(np.zeros((16, 64), dtype=np.float32))


class TestQualityScore:
    def test_score_is_clamped_half_half(self):
        img = _noise()
        q = quality_score(img)
        f = sseq_features(img)
        want = 0.5 * min(1.0, f.spectral_mean[0] / np.log2(63)) + 0.5 * min(
            1.0, f.spatial_mean[0] / 8.0
        )
        assert q.score == pytest.approx(want, abs=1e-12)
        assert 0.0 <= q.score <= 1.0

    def test_constant_scores_zero(self):
        q = quality_score(np.full((64, 64), 0.7, dtype=np.float32))
        assert q.score == 0.0
        assert q.quality_bin == 0

    def test_blur_lowers_score(self):
        img = _noise(seed=9)
        s0 = quality_score(img).score
        s1 = quality_score(gaussian_filter(img, 1.5, mode="nearest")).score
        s2 = quality_score(gaussian_filter(img, 3.0, mode="nearest")).score
        assert s0 > s1 > s2

    def test_bin_consistent_with_score(self):
        q = quality_score(_noise(seed=4))
        assert q.quality_bin == quantize_quality(q.score)


class TestQualityQuantizer:
    @pytest.mark.parametrize(
        "score,expected",
        [
            (0.0, 0),
            (0.4499, 0),
            (0.45, 1),
            (0.5499, 1),
            (0.55, 2),
            (0.6499, 2),
            (0.65, 3),
            (0.7499, 3),
            (0.75, 4),
            (1.0, 4),
        ],
    )
    def test_interval_table(self, score, expected):
        assert quantize_quality(score) == expected

    def test_score_object_validates_bin(self):
        with pytest.raises(ValueError):
            QualityScore(score=0.5, quality_bin=9)
