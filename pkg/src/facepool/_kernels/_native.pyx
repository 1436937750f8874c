# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the per-image hot loops: bilinear affine warps and
8x8 block entropy features. Mirrors _fallback.py operation for operation;
keep the two in sync."""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, log2, cos, sqrt

cnp.import_array()

BACKEND = "native"

cdef double _PI = 3.141592653589793115997963468544185161590576171875


def warp_affine_bilinear(src, inv_affine, int out_h, int out_w):
    """See _fallback.warp_affine_bilinear; identical contract."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s = np.ascontiguousarray(src, dtype=np.float64)
    cdef double a = inv_affine[0]
    cdef double b = inv_affine[1]
    cdef double tx = inv_affine[2]
    cdef double c = inv_affine[3]
    cdef double d = inv_affine[4]
    cdef double ty = inv_affine[5]
    cdef int h = s.shape[0]
    cdef int w = s.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((out_h, out_w), dtype=np.float64)

    cdef int ox, oy, x0, y0
    cdef double sx, sy, fx, fy, v00, v01, v10, v11

    for oy in range(out_h):
        for ox in range(out_w):
            sx = a * ox + b * oy + tx
            sy = c * ox + d * oy + ty
            fx = sx - floor(sx)
            fy = sy - floor(sy)
            x0 = <int>floor(sx)
            y0 = <int>floor(sy)

            v00 = s[y0, x0] if 0 <= y0 < h and 0 <= x0 < w else 0.0
            v01 = s[y0, x0 + 1] if 0 <= y0 < h and 0 <= x0 + 1 < w else 0.0
            v10 = s[y0 + 1, x0] if 0 <= y0 + 1 < h and 0 <= x0 < w else 0.0
            v11 = s[y0 + 1, x0 + 1] if 0 <= y0 + 1 < h and 0 <= x0 + 1 < w else 0.0

            out[oy, ox] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * (
                (1.0 - fx) * v10 + fx * v11
            )
    return out


cdef void _fill_dct8(double[8][8] d) noexcept nogil:
    cdef int i, j
    for j in range(8):
        d[0][j] = 1.0 / sqrt(8.0)
    for i in range(1, 8):
        for j in range(8):
            d[i][j] = sqrt(2.0 / 8.0) * cos(_PI * (2 * j + 1) * i / 16.0)


def block_entropies(gray):
    """See _fallback.block_entropies; identical contract."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g = np.ascontiguousarray(gray, dtype=np.float64)
    cdef int h = g.shape[0]
    cdef int w = g.shape[1]
    cdef int nby = h // 8
    cdef int nbx = w // 8
    if nby == 0 or nbx == 0:
        return np.empty(0), np.empty(0)
    cdef int nb = nby * nbx
    cdef cnp.ndarray[cnp.float64_t, ndim=1] spatial = np.zeros(nb, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] spectral = np.zeros(nb, dtype=np.float64)

    cdef double[8][8] dct
    _fill_dct8(dct)

    cdef int by, bx, i, j, k, lv, idx
    cdef int counts[256]
    cdef double block[8][8]
    cdef double tmp[8][8]
    cdef double coef[8][8]
    cdef double px, acc, p, total, ent

    for by in range(nby):
        for bx in range(nbx):
            idx = by * nbx + bx
            for i in range(256):
                counts[i] = 0
            for i in range(8):
                for j in range(8):
                    px = g[by * 8 + i, bx * 8 + j]
                    block[i][j] = px
                    px = floor(px * 255.0 + 0.5)
                    if px < 0.0:
                        px = 0.0
                    elif px > 255.0:
                        px = 255.0
                    lv = <int>px
                    counts[lv] += 1

            ent = 0.0
            for i in range(256):
                if counts[i] > 0:
                    p = counts[i] / 64.0
                    ent += p * log2(p)
            spatial[idx] = -ent

            # coef = dct @ block @ dct.T, squared, DC dropped.
            for i in range(8):
                for j in range(8):
                    acc = 0.0
                    for k in range(8):
                        acc += dct[i][k] * block[k][j]
                    tmp[i][j] = acc
            total = 0.0
            for i in range(8):
                for j in range(8):
                    acc = 0.0
                    for k in range(8):
                        acc += tmp[i][k] * dct[j][k]
                    acc = acc * acc
                    coef[i][j] = acc
                    total += acc
            total -= coef[0][0]

            if total < 1e-12:
                spectral[idx] = 0.0
            else:
                ent = 0.0
                for i in range(8):
                    for j in range(8):
                        if i == 0 and j == 0:
                            continue
                        p = coef[i][j] / total
                        if p > 0.0:
                            ent += p * log2(p)
                spectral[idx] = -ent

    return spatial, spectral
