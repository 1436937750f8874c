"""Raster kernels checked against scalar reference implementations.

Both the compiled extension and the numpy fallback must agree with a
plain-Python oracle written directly from the definitions, and with
each other.
"""

import math
from collections import Counter

import numpy as np
import pytest
import scipy.fft

from facepool import _kernels
from facepool._kernels import _fallback

try:
    from facepool._kernels import _native
except ImportError:
    _native = None

BACKENDS = [_fallback] + ([_native] if _native is not None else [])
IDS = ["fallback"] + (["native"] if _native is not None else [])


def warp_oracle(src, inv, oh, ow):
    """Bilinear sampling, one output pixel at a time."""
    a, b, tx, c, d, ty = inv
    h, w = src.shape
    out = np.zeros((oh, ow), dtype=np.float32)
    for y in range(oh):
        for x in range(ow):
            sx = a * x + b * y + tx
            sy = c * x + d * y + ty
            x0, y0 = math.floor(sx), math.floor(sy)
            fx, fy = sx - x0, sy - y0
            acc = 0.0
            for dy, wy in ((0, 1 - fy), (1, fy)):
                for dx, wx in ((0, 1 - fx), (1, fx)):
                    yy, xx = y0 + dy, x0 + dx
                    if 0 <= yy < h and 0 <= xx < w:
                        acc += wy * wx * float(src[yy, xx])
            out[y, x] = acc
    return out


def entropy_oracle(gray):
    """Per 8x8 block: histogram entropy of the 8-bit levels and entropy of
    the normalized non-DC DCT power spectrum."""
    h, w = gray.shape
    spatial, spectral = [], []
    for by in range(h // 8):
        for bx in range(w // 8):
            blk = gray[by * 8 : by * 8 + 8, bx * 8 : bx * 8 + 8].astype(np.float64)
            q = np.floor(blk * 255.0 + 0.5).astype(int)
            n = q.size
            ent = -sum(
                (c / n) * math.log2(c / n) for c in Counter(q.ravel().tolist()).values()
            )
            spatial.append(ent)
            coef = scipy.fft.dctn(blk, norm="ortho")
            p = coef * coef
            p[0, 0] = 0.0
            tot = p.sum()
            if tot <= 0:
                spectral.append(0.0)
            else:
                pn = (p / tot).ravel()
                nz = pn[pn > 0]
                spectral.append(float(-(nz * np.log2(nz)).sum()))
    return np.array(spatial), np.array(spectral)


@pytest.fixture(params=BACKENDS, ids=IDS)
def backend(request):
    return request.param


class TestWarp:
    def test_matches_scalar_oracle(self, backend):
        rng = np.random.default_rng(5)
        src = rng.random((24, 20)).astype(np.float32)
        ang = math.radians(13.0)
        s = 1.0 / 1.2
        inv = (
            s * math.cos(ang),
            -s * math.sin(ang),
            2.3,
            s * math.sin(ang),
            s * math.cos(ang),
            -1.7,
        )
        got = backend.warp_affine_bilinear(src, inv, 16, 16)
        np.testing.assert_allclose(got, warp_oracle(src, inv, 16, 16), atol=1e-6)

    def test_identity(self, backend):
        src = np.random.default_rng(1).random((12, 12)).astype(np.float32)
        out = backend.warp_affine_bilinear(src, (1.0, 0.0, 0.0, 0.0, 1.0, 0.0), 12, 12)
        assert np.array_equal(out, src)

    def test_integer_shift(self, backend):
        src = np.random.default_rng(2).random((10, 10)).astype(np.float32)
        out = backend.warp_affine_bilinear(src, (1.0, 0.0, 3.0, 0.0, 1.0, 2.0), 6, 6)
        assert np.array_equal(out, src[2:8, 3:9])

    def test_outside_is_zero(self, backend):
        src = np.ones((8, 8), dtype=np.float32)
        out = backend.warp_affine_bilinear(src, (1.0, 0.0, 100.0, 0.0, 1.0, 0.0), 4, 4)
        assert np.all(out == 0.0)

    def test_partial_support_fades(self, backend):
        # a sample half outside the source keeps only the inside weight
        src = np.ones((4, 4), dtype=np.float32)
        out = backend.warp_affine_bilinear(src, (1.0, 0.0, -0.5, 0.0, 1.0, 0.0), 1, 1)
        assert out[0, 0] == pytest.approx(0.5, abs=1e-7)


class TestBlockEntropies:
    def test_matches_oracle(self, backend):
        rng = np.random.default_rng(6)
        gray = rng.random((32, 24)).astype(np.float32)
        sp, se = backend.block_entropies(gray)
        osp, ose = entropy_oracle(gray)
        np.testing.assert_allclose(sp, osp, atol=1e-9)
        np.testing.assert_allclose(se, ose, atol=1e-5)

    def test_constant_block_is_zero(self, backend):
        sp, se = backend.block_entropies(np.full((8, 8), 0.5, dtype=np.float32))
        assert sp[0] == 0.0
        assert se[0] == 0.0

    def test_checkerboard_spatial_one_bit(self, backend):
        cb = (np.indices((16, 16)).sum(axis=0) % 2).astype(np.float32)
        sp, _ = backend.block_entropies(cb)
        np.testing.assert_allclose(sp, 1.0, atol=1e-12)

    def test_row_major_block_order(self, backend):
        # brighten one block; its index identifies the traversal order
        gray = np.zeros((16, 24), dtype=np.float32)
        gray[8:16, 8:16] = np.random.default_rng(8).random((8, 8)).astype(np.float32)
        sp, _ = backend.block_entropies(gray)
        assert sp.shape == (6,)
        assert np.argmax(sp) == 4  # second row, second column of 3 per row


@pytest.mark.skipif(_native is None, reason="compiled extension not built")
class TestBackendAgreement:
    def test_warp_identical(self):
        rng = np.random.default_rng(10)
        src = rng.random((40, 40)).astype(np.float32)
        inv = (0.7, -0.2, 5.0, 0.2, 0.7, -3.0)
        a = _fallback.warp_affine_bilinear(src, inv, 32, 32)
        b = _native.warp_affine_bilinear(src, inv, 32, 32)
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_entropies_close(self):
        rng = np.random.default_rng(11)
        gray = rng.random((64, 64)).astype(np.float32)
        fa = _fallback.block_entropies(gray)
        na = _native.block_entropies(gray)
        for x, y in zip(fa, na):
            np.testing.assert_allclose(x, y, atol=1e-9)


def test_backend_selection_reports_name():
    assert _kernels.BACKEND in ("native", "numpy")
