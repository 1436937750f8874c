"""Pure-numpy kernels, used when the compiled extension is unavailable.

Both backends implement the exact same per-pixel arithmetic (same operation
order, float64 throughout) so results agree to the last bit for the warp and
to ~1e-12 for the entropy features (summation order differs there).
"""

import numpy as np

BACKEND = "numpy"


def _dct8():
    # Orthonormal 2D DCT-II basis, 8x8.
    d = np.empty((8, 8), dtype=np.float64)
    d[0, :] = 1.0 / np.sqrt(8.0)
    for i in range(1, 8):
        for j in range(8):
            d[i, j] = np.sqrt(2.0 / 8.0) * np.cos(np.pi * (2 * j + 1) * i / 16.0)
    return d


_DCT8 = _dct8()


def warp_affine_bilinear(src, inv_affine, out_h, out_w):
    """Resample `src` (2D float64) into an out_h x out_w raster.

    inv_affine = (a, b, tx, c, d, ty) maps an output pixel (x, y) to source
    coordinates (a*x + b*y + tx, c*x + d*y + ty). Samples outside the source
    read as 0.
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    a, b, tx, c, d, ty = (float(v) for v in inv_affine)
    h, w = src.shape

    ys, xs = np.meshgrid(
        np.arange(out_h, dtype=np.float64),
        np.arange(out_w, dtype=np.float64),
        indexing="ij",
    )
    sx = a * xs + b * ys + tx
    sy = c * xs + d * ys + ty

    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    def tap(yi, xi):
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = src[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(inside, vals, 0.0)

    v00 = tap(y0, x0)
    v01 = tap(y0, x0 + 1)
    v10 = tap(y0 + 1, x0)
    v11 = tap(y0 + 1, x0 + 1)

    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * (
        (1.0 - fx) * v10 + fx * v11
    )


def block_entropies(gray):
    """Per-block entropy features over non-overlapping 8x8 tiles.

    For each tile of `gray` (2D float64, values in [0, 1]) computes
      spatial:  Shannon entropy (bits) of the 256-bin histogram of the 64
                pixels after 8-bit quantization, and
      spectral: Shannon entropy (bits) of the normalized squared orthonormal
                DCT-II coefficients, DC excluded; tiles whose AC mass is
                below 1e-12 score 0.
    Returns (spatial, spectral) as float64 vectors, row-major tile order.
    Trailing rows/columns that do not fill a tile are ignored.
    """
    gray = np.ascontiguousarray(gray, dtype=np.float64)
    h, w = gray.shape
    nby, nbx = h // 8, w // 8
    if nby == 0 or nbx == 0:
        return np.empty(0), np.empty(0)
    nb = nby * nbx

    tiles = (
        gray[: nby * 8, : nbx * 8]
        .reshape(nby, 8, nbx, 8)
        .transpose(0, 2, 1, 3)
        .reshape(nb, 8, 8)
    )

    # Spatial: histogram entropy of quantized 8-bit levels, 64 samples/tile.
    levels = np.floor(tiles * 255.0 + 0.5)
    levels = np.clip(levels, 0.0, 255.0).astype(np.int64).reshape(nb, 64)
    flat = levels + np.arange(nb, dtype=np.int64)[:, None] * 256
    counts = np.bincount(flat.ravel(), minlength=nb * 256).reshape(nb, 256)
    p = counts / 64.0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log2(np.maximum(p, 1e-300)), 0.0)
    spatial = -terms.sum(axis=1)

    # Spectral: entropy of the normalized squared DCT coefficients minus DC.
    coef = _DCT8 @ tiles @ _DCT8.T
    sq = coef * coef
    total = sq.sum(axis=(1, 2)) - sq[:, 0, 0]
    safe = np.maximum(total, 1e-300)
    ps = sq / safe[:, None, None]
    ps[:, 0, 0] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(ps > 0.0, ps * np.log2(np.maximum(ps, 1e-300)), 0.0)
    spectral = np.where(total < 1e-12, 0.0, -terms.sum(axis=(1, 2)))

    return spatial, spectral
