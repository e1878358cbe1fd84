"""Compare the numba and pure-numpy rasterization paths.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]

Both paths are imported from lineagelab._kernels directly so a single
process can time them side by side regardless of LINEAGELAB_NUMBA.
"""

import argparse
import math
import time

import numpy as np

from lineagelab import _kernels


def make_polygons(rng, n, frame=512):
    polys = []
    for _ in range(n):
        cx, cy = rng.uniform(50, frame - 50, 2)
        r = rng.uniform(8, 30)
        k = int(rng.integers(8, 17))
        theta = np.linspace(0, 2 * math.pi, k, endpoint=False)
        rr = r * rng.uniform(0.8, 1.2, k)
        polys.append(np.stack([cx + rr * np.cos(theta),
                               cy + rr * np.sin(theta)], axis=1))
    return polys


def bench(fn, polys, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        for poly in polys:
            xs, ys = poly[:, 0], poly[:, 1]
            x0 = math.floor(xs.min())
            y0 = math.floor(ys.min())
            w = math.ceil(xs.max()) - x0
            h = math.ceil(ys.max()) - y0
            fn(xs, ys, float(x0), float(y0), w, h)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--polygons", type=int, default=2000)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    polys = make_polygons(rng, args.polygons)

    # correctness cross-check before timing
    for poly in polys[:50]:
        xs, ys = poly[:, 0], poly[:, 1]
        x0, y0 = math.floor(xs.min()), math.floor(ys.min())
        w = math.ceil(xs.max()) - x0
        h = math.ceil(ys.max()) - y0
        a = _kernels._rasterize_numpy(xs, ys, float(x0), float(y0), w, h)
        b = _kernels.rasterize_polygon(xs, ys, x0, y0, w, h)
        assert np.array_equal(a, b), "paths disagree"

    t_numpy = bench(_kernels._rasterize_numpy, polys, args.repeats)
    print(f"numpy fallback : {t_numpy * 1e3:8.1f} ms "
          f"({args.polygons} polygons)")

    if _kernels.HAS_NUMBA:
        jit = _kernels._rasterize_jit
        bench(jit, polys[:10], 1)  # warm the JIT cache
        t_jit = bench(jit, polys, args.repeats)
        print(f"numba njit     : {t_jit * 1e3:8.1f} ms "
              f"({args.polygons} polygons)")
        print(f"speedup        : {t_numpy / t_jit:8.1f}x")
    else:
        print("numba not active (LINEAGELAB_NUMBA=0 or not installed)")


if __name__ == "__main__":
    main()
