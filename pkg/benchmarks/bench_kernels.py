#!/usr/bin/env python3
"""Time the compiled raster kernels against the pure numpy fallback.

Runs the bilinear affine warp and the blockwise entropy kernel on the
same inputs through both backends, reports wall time per call and the
speed ratio, and checks the results agree.

Usage:
    python benchmarks/bench_kernels.py [--size 256] [--repeats 200]
"""

from __future__ import annotations

import argparse
import math
import time

import numpy as np

from facepool._kernels import _fallback

try:
    from facepool._kernels import _native
except ImportError:
    _native = None


def _best_of(fn, repeats: int) -> float:
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256, help="source image side")
    ap.add_argument("--out-size", type=int, default=128, help="warp output side")
    ap.add_argument("--repeats", type=int, default=200, help="timing repeats (best-of)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if _native is None:
        print("compiled backend not importable; build the extension first")
        print("timing fallback only")

    rng = np.random.default_rng(args.seed)
    src = rng.random((args.size, args.size), dtype=np.float64).astype(np.float32)

    # a representative alignment transform: slight rotation, mild zoom, shift
    ang = math.radians(7.0)
    s = 1.0 / 1.4
    inv = (
        s * math.cos(ang),
        -s * math.sin(ang),
        5.25,
        s * math.sin(ang),
        s * math.cos(ang),
        -3.5,
    )
    oh = ow = args.out_size

    backends = [("fallback", _fallback)] + ([("native", _native)] if _native else [])
    results = {}
    print(f"warp {args.size}x{args.size} -> {oh}x{ow}, entropy on {args.size}x{args.size}")
    print(f"{'backend':<10} {'warp ms':>10} {'entropy ms':>12}")
    for name, mod in backends:
        warped = mod.warp_affine_bilinear(src, inv, oh, ow)
        ents = mod.block_entropies(src)
        tw = _best_of(lambda m=mod: m.warp_affine_bilinear(src, inv, oh, ow), args.repeats)
        te = _best_of(lambda m=mod: m.block_entropies(src), args.repeats)
        results[name] = (tw, te, warped, ents)
        print(f"{name:<10} {tw * 1e3:>10.3f} {te * 1e3:>12.3f}")

    if _native:
        fw, fe, wf, ef = results["fallback"]
        nw, ne, wn, en = results["native"]
        dw = float(np.abs(wf - wn).max())
        de = max(float(np.abs(a - b).max()) for a, b in zip(ef, en))
        print(f"speedup    {fw / nw:>9.1f}x {fe / ne:>11.1f}x")
        print(f"max |diff| warp {dw:.3e}, entropies {de:.3e}")
        if dw > 1e-5 or de > 1e-9:
            print("BACKENDS DISAGREE")
            return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
