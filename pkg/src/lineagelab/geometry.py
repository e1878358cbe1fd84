"""Masks, overlap measures and 2D shape descriptors.

Conventions: image origin is top-left, x grows right, y grows down.
Pixel (i, j) covers the unit square [i, i+1) x [j, j+1) and belongs to a
mask iff its center (i+0.5, j+0.5) lies inside the polygon under the
even-odd rule. Bounding-box max edges are exclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from shapely.geometry import Polygon as _ShapelyPolygon

from ._kernels import rasterize_polygon, window_intersection_count


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box, max edges exclusive."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise GeometryError(f"degenerate bbox {self!r}")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height


def dilate_bbox(b: BBox, border: int, frame_size: tuple[int, int]) -> BBox:
    """Grow each side outward by `border` px, clamped to the frame."""
    w, h = frame_size
    return BBox(
        max(b.x_min - border, 0),
        max(b.y_min - border, 0),
        min(b.x_max + border, w),
        min(b.y_max + border, h),
    )


class Mask:
    """Polygonal cell mask bound to a frame, with a lazily derived raster."""

    __slots__ = ("polygon", "frame_size", "_raster", "_origin", "_bbox")

    def __init__(self, polygon, frame_size):
        poly = np.asarray(polygon, dtype=np.float64)
        if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
            raise GeometryError("polygon needs >= 3 (x, y) vertices")
        w, h = frame_size
        if poly[:, 0].min() < 0 or poly[:, 0].max() > w or \
           poly[:, 1].min() < 0 or poly[:, 1].max() > h:
            raise GeometryError("polygon vertex outside frame bounds")
        if not _ShapelyPolygon(poly).is_valid:
            raise GeometryError("polygon is self-intersecting or degenerate")
        self.polygon = poly
        self.polygon.setflags(write=False)
        self.frame_size = (int(w), int(h))
        x0 = max(int(math.floor(poly[:, 0].min())), 0)
        y0 = max(int(math.floor(poly[:, 1].min())), 0)
        x1 = min(int(math.ceil(poly[:, 0].max())), w)
        y1 = min(int(math.ceil(poly[:, 1].max())), h)
        raster = rasterize_polygon(poly[:, 0], poly[:, 1], x0, y0,
                                   max(x1 - x0, 1), max(y1 - y0, 1))
        if not raster.any():
            raise GeometryError("zero-area mask")
        # trim to tight raster extents so bbox/extent are exact
        rows = np.flatnonzero(raster.any(axis=1))
        cols = np.flatnonzero(raster.any(axis=0))
        self._raster = raster[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
        self._raster.setflags(write=False)
        self._origin = (x0 + int(cols[0]), y0 + int(rows[0]))
        self._bbox = BBox(self._origin[0], self._origin[1],
                          self._origin[0] + self._raster.shape[1],
                          self._origin[1] + self._raster.shape[0])

    @property
    def raster(self):
        return self._raster

    @property
    def origin(self):
        return self._origin

    @property
    def bbox(self) -> BBox:
        return self._bbox

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self._raster))


def intersection_area(a: Mask, b: Mask) -> int:
    if a.frame_size != b.frame_size:
        raise GeometryError("masks belong to different frame sizes")
    return window_intersection_count(a.raster, a.origin, b.raster, b.origin)


def iou(a: Mask, b: Mask) -> float:
    """Pixel IOU of two rasterized masks sharing a frame."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return inter / union


def centroid(m: Mask):
    ys, xs = np.nonzero(m.raster)
    x0, y0 = m.origin
    return (x0 + float(xs.mean()) + 0.5, y0 + float(ys.mean()) + 0.5)


FEATURE_NAMES = ("area", "perimeter", "circularity", "eccentricity",
                 "solidity", "extent", "aspect_ratio")


@dataclass(frozen=True)
class ShapeFeatures:
    area: float
    perimeter: float
    circularity: float
    eccentricity: float
    solidity: float
    extent: float
    aspect_ratio: float

    def as_tuple(self):
        return tuple(getattr(self, n) for n in FEATURE_NAMES)


def shape_features(m: Mask) -> ShapeFeatures:
    """Seven translation-invariant 2D descriptors of a mask.

    The feature set is table-driven (see FEATURE_NAMES); swap entries by
    wrapping this function rather than editing call sites.
    """
    area = float(m.area)
    poly = m.polygon
    closed = np.vstack([poly, poly[:1]])
    perimeter = float(np.hypot(np.diff(closed[:, 0]), np.diff(closed[:, 1])).sum())
    circularity = 4.0 * math.pi * area / (perimeter * perimeter)

    ys, xs = np.nonzero(m.raster)
    pts = np.stack([xs + 0.5, ys + 0.5], axis=1).astype(np.float64)
    cov = np.cov(pts, rowvar=False, bias=True)
    # pixel footprint keeps single-row rasters from degenerating entirely,
    # but truly collinear second moments are still rejected
    evals = np.linalg.eigvalsh(cov + np.eye(2) / 12.0)
    lo, hi = float(evals[0]), float(evals[1])
    if lo <= 1e-9 or hi <= 1e-9:
        raise GeometryError("degenerate second-moment matrix")
    eccentricity = math.sqrt(max(1.0 - lo / hi, 0.0))
    aspect_ratio = math.sqrt(hi / lo)

    shp = _ShapelyPolygon(poly)
    hull_area = shp.convex_hull.area
    solidity = shp.area / hull_area if hull_area > 0 else 1.0
    extent = area / m.bbox.area
    return ShapeFeatures(area, perimeter, circularity, eccentricity,
                         min(solidity, 1.0), extent, aspect_ratio)


# Per-feature normalization used by shape_distance. "rel" scales the
# difference by the pair mean (size-like features); numbers are fixed
# characteristic spreads for the dimensionless features.
DEFAULT_FEATURE_SCALES = {
    "area": "rel",
    "perimeter": "rel",
    "circularity": 0.25,
    "eccentricity": 0.25,
    "solidity": 0.2,
    "extent": 0.2,
    "aspect_ratio": "rel",
}


def shape_distance(a: ShapeFeatures, b: ShapeFeatures,
                   scales=None, weights=None) -> float:
    """Weighted L2 distance over normalized feature differences.

    Zero iff features are identical; symmetric. Scales and weights are
    overridable per feature.
    """
    scales = scales or DEFAULT_FEATURE_SCALES
    weights = weights or {}
    total = 0.0
    for name in FEATURE_NAMES:
        va, vb = getattr(a, name), getattr(b, name)
        scale = scales.get(name, 1.0)
        if scale == "rel":
            denom = 0.5 * (abs(va) + abs(vb))
            z = (va - vb) / denom if denom > 0 else 0.0
        else:
            z = (va - vb) / scale
        total += weights.get(name, 1.0) * z * z
    return math.sqrt(total)
