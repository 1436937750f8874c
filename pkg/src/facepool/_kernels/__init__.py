"""Kernel backend selection.

The compiled extension is preferred; the numpy fallback is used when the
extension was not built or when FACEPOOL_NO_NATIVE is set. Both expose the
same two functions with identical semantics.
"""

import os

if os.environ.get("FACEPOOL_NO_NATIVE"):
    from facepool._kernels._fallback import BACKEND, block_entropies, warp_affine_bilinear
else:
    try:
        from facepool._kernels._native import BACKEND, block_entropies, warp_affine_bilinear
    except ImportError:
        from facepool._kernels._fallback import (
            BACKEND,
            block_entropies,
            warp_affine_bilinear,
        )

__all__ = ["BACKEND", "block_entropies", "warp_affine_bilinear"]
