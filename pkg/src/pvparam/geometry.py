"""Planar geometry primitives shared by every stage.

Polygons live in a projected CRS (meters) or, during vectorization, in
continuous pixel coordinates ``(col, row)`` where pixel ``(r, c)`` covers the
unit square centred on ``(c, r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import shapely
from shapely.geometry import MultiPolygon, Polygon
from shapely.geometry.polygon import orient

Point = tuple[float, float]
Ring = tuple[Point, ...]


class GeometryError(ValueError):
    """Raised for invalid ring topology or empty geometry."""


def signed_ring_area(ring: Sequence[Point]) -> float:
    """Shoelace area; positive for counterclockwise rings."""
    if len(ring) < 3:
        return 0.0
    xy = np.asarray(ring, dtype=float)
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _open_ring(coords) -> Ring:
    pts = [(float(x), float(y)) for x, y in coords]
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts = pts[:-1]
    return tuple(pts)


@dataclass(frozen=True)
class ArrayPolygon:
    """Polygon footprint with optional holes.

    ``exterior`` is counterclockwise and ``holes`` clockwise; rings are stored
    open (first vertex not repeated). ``area_m2`` is in squared units of the
    coordinate space, so pixel-space polygons carry pixel areas.
    """

    exterior: Ring
    holes: tuple[Ring, ...] = ()
    id: str = ""
    area_m2: float = 0.0
    crs_id: str = ""
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    @classmethod
    def from_rings(cls, exterior, holes=(), id="", crs_id="", meta=None) -> "ArrayPolygon":
        ext = _open_ring(exterior)
        if signed_ring_area(ext) < 0:
            ext = ext[::-1]
        hs = []
        for h in holes:
            h = _open_ring(h)
            if signed_ring_area(h) > 0:
                h = h[::-1]
            hs.append(h)
        area = signed_ring_area(ext) + sum(signed_ring_area(h) for h in hs)
        return cls(ext, tuple(hs), id, area, crs_id, dict(meta or {}))

    @classmethod
    def from_shapely(cls, geom: Polygon, id="", crs_id="", meta=None) -> "ArrayPolygon":
        if not isinstance(geom, Polygon) or geom.is_empty:
            raise GeometryError(f"expected a non-empty Polygon, got {geom.geom_type}")
        geom = orient(geom, 1.0)
        return cls.from_rings(
            geom.exterior.coords, [h.coords for h in geom.interiors], id, crs_id, meta
        )

    def to_shapely(self) -> Polygon:
        return Polygon(self.exterior, self.holes)

    def centroid(self) -> Point:
        c = self.to_shapely().centroid
        return (c.x, c.y)

    def with_id(self, id: str) -> "ArrayPolygon":
        return ArrayPolygon(self.exterior, self.holes, id, self.area_m2, self.crs_id, dict(self.meta))

    def validate(self) -> None:
        """Check ring orientation, simplicity and hole containment."""
        if len(self.exterior) < 3:
            raise GeometryError("exterior ring needs at least 3 vertices")
        if signed_ring_area(self.exterior) <= 0:
            raise GeometryError("exterior ring must be counterclockwise with positive area")
        if any(signed_ring_area(h) >= 0 for h in self.holes):
            raise GeometryError("holes must be clockwise")
        if not self.to_shapely().is_valid:
            raise GeometryError(shapely.is_valid_reason(self.to_shapely()))


def as_geometry(poly) -> Polygon | MultiPolygon:
    """Accept an ArrayPolygon or a shapely areal geometry."""
    if isinstance(poly, ArrayPolygon):
        return poly.to_shapely()
    if isinstance(poly, (Polygon, MultiPolygon)):
        return poly
    if hasattr(poly, "geom_type") and poly.geom_type == "GeometryCollection":
        parts = [g for g in poly.geoms if isinstance(g, (Polygon, MultiPolygon))]
        return shapely.union_all(parts) if parts else Polygon()
    raise TypeError(f"not an areal geometry: {type(poly).__name__}")


def polygon_parts(geom) -> list[Polygon]:
    """Split a (multi)polygon or collection into non-empty Polygons."""
    if geom.is_empty:
        return []
    if isinstance(geom, Polygon):
        return [geom]
    out = []
    for g in getattr(geom, "geoms", []):
        out.extend(polygon_parts(g))
    return out


# ---------------------------------------------------------------------------
# Affine pixel <-> map transform
# ---------------------------------------------------------------------------


OVERLAY_GRID_REL = 1e-12


def intersection_areas(geoms, other) -> np.ndarray:
    """Areas of ``geoms & other``, overlaid on a fixed-precision grid.

    Exact floating-point overlay occasionally collapses to a point set when
    edges nearly coincide; shifting to a local origin and snapping at a tiny
    relative grid keeps the result stable.
    """
    arr = np.atleast_1d(np.asarray(geoms, dtype=object))
    if other.is_empty or len(arr) == 0:
        return np.zeros(len(arr))
    ax0, ay0, ax1, ay1 = shapely.total_bounds(arr)
    bx0, by0, bx1, by1 = other.bounds
    # combined bounds keep a single pair's overlay symmetric in its arguments
    x0, y0, x1, y1 = min(ax0, bx0), min(ay0, by0), max(ax1, bx1), max(ay1, by1)
    grid = OVERLAY_GRID_REL * max(1.0, x1 - x0, y1 - y0)
    shift = lambda g: shapely.transform(g, lambda c: c - (x0, y0))  # noqa: E731
    return shapely.area(shapely.intersection(shift(arr), shift(other), grid_size=grid))


class Affine(NamedTuple):
    """x = a*col + b*row + c ; y = d*col + e*row + f (pixel centres)."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    @classmethod
    def from_worldfile(cls, values: Sequence[float]) -> "Affine":
        A, D, B, E, C, F = (float(v) for v in values)
        return cls(A, B, C, D, E, F)

    def to_worldfile(self) -> tuple[float, ...]:
        return (self.a, self.d, self.b, self.e, self.c, self.f)

    @property
    def determinant(self) -> float:
        return self.a * self.e - self.b * self.d

    def apply(self, col, row):
        col = np.asarray(col, dtype=float)
        row = np.asarray(row, dtype=float)
        return self.a * col + self.b * row + self.c, self.d * col + self.e * row + self.f

    def inverse(self) -> "Affine":
        det = self.determinant
        if det == 0:
            raise GeometryError("affine transform is not invertible")
        ia, ib = self.e / det, -self.b / det
        id_, ie = -self.d / det, self.a / det
        return Affine(ia, ib, -(ia * self.c + ib * self.f), id_, ie, -(id_ * self.c + ie * self.f))

    def transform_geometry(self, geom):
        return shapely.transform(geom, lambda xy: np.column_stack(self.apply(xy[:, 0], xy[:, 1])))


# ---------------------------------------------------------------------------
# Convex hull and minimal-area rectangle
# ---------------------------------------------------------------------------


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Iterable[Point]) -> list[Point]:
    """Andrew's monotone chain; counterclockwise, collinear points dropped."""
    pts = sorted(set((float(x), float(y)) for x, y in points))
    if len(pts) <= 2:
        return pts
    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


@dataclass(frozen=True)
class OrientedRectangle:
    """Rectangle with long half-extent ``a`` along ``angle`` (radians, [0, pi))."""

    center: Point
    half_extents: tuple[float, float]
    angle: float

    @property
    def area(self) -> float:
        return 4.0 * self.half_extents[0] * self.half_extents[1]

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        u = np.array([math.cos(self.angle), math.sin(self.angle)])
        return u, np.array([-u[1], u[0]])

    def corners(self) -> np.ndarray:
        """Counterclockwise corners starting at (-a, -b) in the local frame."""
        u, v = self.axes
        a, b = self.half_extents
        c = np.asarray(self.center, dtype=float)
        return np.array([c - a * u - b * v, c + a * u - b * v, c + a * u + b * v, c - a * u + b * v])

    def to_shapely(self) -> Polygon:
        return Polygon(self.corners())


def minimal_area_rectangle(points: Iterable[Point], min_extent: float = 0.05) -> OrientedRectangle:
    """Minimum-area enclosing rectangle by rotating calipers over the hull.

    Collinear or single-point input yields a rectangle whose short side is
    clamped to ``min_extent``; other input is never clamped.
    """
    pts = np.asarray(list(points), dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise GeometryError("minimal_area_rectangle needs at least one point")
    hull = np.asarray(convex_hull(map(tuple, pts)), dtype=float)
    if len(hull) < 3:
        return _degenerate_rectangle(hull, min_extent)

    n = len(hull)
    edges = np.roll(hull, -1, axis=0) - hull
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    dirs = edges / lengths[:, None]

    def proj_u(k, i):
        return float(np.dot(hull[k % n], dirs[i]))

    def proj_v(k, i):
        return float(-hull[k % n][0] * dirs[i][1] + hull[k % n][1] * dirs[i][0])

    # calipers: j -> max along u, k -> max along normal, m -> min along u
    j = k = m = 0
    best = None
    for i in range(n):
        if i == 0:
            j = int(np.argmax(hull @ dirs[0]))
            k = int(np.argmax(-hull[:, 0] * dirs[0][1] + hull[:, 1] * dirs[0][0]))
            m = int(np.argmin(hull @ dirs[0]))
        else:
            while proj_u(j + 1, i) > proj_u(j, i) + 1e-15:
                j += 1
            while proj_v(k + 1, i) > proj_v(k, i) + 1e-15:
                k += 1
            while proj_u(m + 1, i) < proj_u(m, i) - 1e-15:
                m += 1
        lo_u, hi_u = proj_u(m, i), proj_u(j, i)
        lo_v = proj_v(i, i)
        hi_v = proj_v(k, i)
        area = (hi_u - lo_u) * (hi_v - lo_v)
        if best is None or area < best[0] - 1e-12 * abs(best[0]):
            best = (area, i, lo_u, hi_u, lo_v, hi_v)

    _, i, lo_u, hi_u, lo_v, hi_v = best
    # tighten extents exactly over all hull points for this direction
    u = dirs[i]
    v = np.array([-u[1], u[0]])
    pu, pv = hull @ u, hull @ v
    # hulls that are collinear up to round-off still get the clamp
    thin = np.ptp(pv) <= 1e-12 * max(1.0, float(np.ptp(pu)))
    return _frame_rectangle(u, pu.min(), pu.max(), pv.min(), pv.max(), min_extent if thin else 0.0)


def _frame_rectangle(u, lo_u, hi_u, lo_v, hi_v, min_extent) -> OrientedRectangle:
    u = np.asarray(u, dtype=float)
    v = np.array([-u[1], u[0]])
    cu, cv = 0.5 * (lo_u + hi_u), 0.5 * (lo_v + hi_v)
    center = cu * u + cv * v
    hu, hv = 0.5 * (hi_u - lo_u), 0.5 * (hi_v - lo_v)
    long_dir = u
    if hv > hu:
        hu, hv = hv, hu
        long_dir = v
    half_min = 0.5 * min_extent
    hu, hv = max(hu, half_min), max(hv, half_min)
    angle = math.atan2(long_dir[1], long_dir[0]) % math.pi
    if angle >= math.pi:
        angle = 0.0
    return OrientedRectangle((float(center[0]), float(center[1])), (float(hu), float(hv)), angle)


def _degenerate_rectangle(hull: np.ndarray, min_extent: float) -> OrientedRectangle:
    if len(hull) == 1:
        return _frame_rectangle((1.0, 0.0), hull[0, 0], hull[0, 0], hull[0, 1], hull[0, 1], min_extent)
    d = hull[1] - hull[0]
    u = d / np.hypot(*d)
    v = np.array([-u[1], u[0]])
    pu, pv = hull @ u, hull @ v
    return _frame_rectangle(u, pu.min(), pu.max(), pv.min(), pv.max(), min_extent)
