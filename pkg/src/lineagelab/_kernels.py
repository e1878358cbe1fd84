"""Hot numeric kernels with numba acceleration and a pure-numpy fallback.

The fallback path is selected by setting the environment variable
``LINEAGELAB_NUMBA=0`` before import; ``benchmarks/bench_kernels.py``
compares both paths.
"""

import os

import numpy as np

_want_numba = os.environ.get("LINEAGELAB_NUMBA", "1") != "0"

if _want_numba:
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover
        HAS_NUMBA = False
else:
    HAS_NUMBA = False


def _rasterize_impl(xs, ys, x0, y0, width, height):
    # Even-odd rule on pixel centers: pixel (i, j) is inside iff the number
    # of polygon edges crossing the horizontal line y = y0 + j + 0.5 at an
    # x strictly left of x0 + i + 0.5 is odd.
    out = np.zeros((height, width), dtype=np.uint8)
    n = xs.shape[0]
    crossings = np.empty(n, dtype=np.float64)
    for j in range(height):
        yc = y0 + j + 0.5
        m = 0
        for k in range(n):
            y1 = ys[k]
            y2 = ys[(k + 1) % n]
            if (y1 <= yc) != (y2 <= yc):
                x1 = xs[k]
                x2 = xs[(k + 1) % n]
                crossings[m] = x1 + (yc - y1) * (x2 - x1) / (y2 - y1)
                m += 1
        if m < 2:
            continue
        row = np.sort(crossings[:m])
        for p in range(0, m - 1, 2):
            a = row[p]
            b = row[p + 1]
            # pixel centers in (a, b]
            i_start = int(np.floor(a - x0 - 0.5)) + 1
            i_end = int(np.floor(b - x0 - 0.5))
            if i_start < 0:
                i_start = 0
            if i_end > width - 1:
                i_end = width - 1
            for i in range(i_start, i_end + 1):
                out[j, i] = 1
    return out


def _rasterize_numpy(xs, ys, x0, y0, width, height):
    # Vectorized even-odd test: accumulate left-crossing parity per pixel,
    # one edge at a time.
    xc = x0 + np.arange(width) + 0.5
    yc = y0 + np.arange(height) + 0.5
    inside = np.zeros((height, width), dtype=bool)
    n = xs.shape[0]
    for k in range(n):
        y1, y2 = ys[k], ys[(k + 1) % n]
        spans = (y1 <= yc) != (y2 <= yc)
        if not spans.any():
            continue
        x1, x2 = xs[k], xs[(k + 1) % n]
        cx = x1 + (yc[spans] - y1) * (x2 - x1) / (y2 - y1)
        crossed = cx[:, None] < xc[None, :]
        inside[spans] ^= crossed
    return inside.astype(np.uint8)


if HAS_NUMBA:
    _rasterize_jit = njit(cache=True, nogil=True)(_rasterize_impl)

    def rasterize_polygon(xs, ys, x0, y0, width, height):
        return _rasterize_jit(
            np.ascontiguousarray(xs, dtype=np.float64),
            np.ascontiguousarray(ys, dtype=np.float64),
            float(x0), float(y0), int(width), int(height),
        )
else:
    def rasterize_polygon(xs, ys, x0, y0, width, height):
        return _rasterize_numpy(
            np.asarray(xs, dtype=np.float64),
            np.asarray(ys, dtype=np.float64),
            float(x0), float(y0), int(width), int(height),
        )


def window_intersection_count(a, a_origin, b, b_origin):
    """Number of set pixels shared by two rasters given their frame origins."""
    ax, ay = a_origin
    bx, by = b_origin
    x0 = max(ax, bx)
    y0 = max(ay, by)
    x1 = min(ax + a.shape[1], bx + b.shape[1])
    y1 = min(ay + a.shape[0], by + b.shape[0])
    if x0 >= x1 or y0 >= y1:
        return 0
    wa = a[y0 - ay:y1 - ay, x0 - ax:x1 - ax]
    wb = b[y0 - by:y1 - by, x0 - bx:x1 - bx]
    return int(np.count_nonzero(np.logical_and(wa, wb)))
