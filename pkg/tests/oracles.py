"""Independent reference implementations the tests compare against.

Nothing here imports pvparam; each oracle is a brute-force or closed-form
route to the same quantity.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial import ConvexHull


# ---------------------------------------------------------------------------
# Scanline rasterization (even-odd rule, pixel centres)
# ---------------------------------------------------------------------------


def _rings(geom):
    polys = getattr(geom, "geoms", [geom])
    for p in polys:
        yield np.asarray(p.exterior.coords)
        for r in p.interiors:
            yield np.asarray(r.coords)


def scanline_raster(geom, x0: float, y0: float, h: float, shape: tuple[int, int]) -> np.ndarray:
    """Boolean grid; cell (i, j) has centre (x0 + (j + .5) h, y0 + (i + .5) h)."""
    rows, cols = shape
    yc = y0 + (np.arange(rows) + 0.5) * h
    parity = np.zeros((rows, cols + 1), dtype=np.uint8)
    for ring in _rings(geom):
        a, b = ring[:-1], ring[1:]
        ya, yb = a[:, 1][:, None], b[:, 1][:, None]
        # half-open rule on y so shared vertices are counted once
        hit = (ya <= yc) != (yb <= yc)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (yc - ya) / (yb - ya)
        x = a[:, 0][:, None] + t * (b[:, 0] - a[:, 0])[:, None]
        col = np.ceil((x - x0) / h - 0.5)
        e_idx, r_idx = np.nonzero(hit)
        c = np.clip(col[e_idx, r_idx], 0, cols).astype(int)
        np.add.at(parity, (r_idx, c), 1)
    return (np.cumsum(parity, axis=1, dtype=np.uint8)[:, :cols] & 1).astype(bool)


def raster_overlap(a, b, n: int = 2048) -> tuple[float, float]:
    """(IoU, Dice) of two polygons on an n x n grid over their joint bounds."""
    ax0, ay0, ax1, ay1 = a.bounds
    bx0, by0, bx1, by1 = b.bounds
    x0, y0 = min(ax0, bx0), min(ay0, by0)
    h = max(max(ax1, bx1) - x0, max(ay1, by1) - y0) / n
    ra = scanline_raster(a, x0, y0, h, (n, n))
    rb = scanline_raster(b, x0, y0, h, (n, n))
    inter = np.count_nonzero(ra & rb)
    union = np.count_nonzero(ra | rb)
    sa, sb = np.count_nonzero(ra), np.count_nonzero(rb)
    iou = inter / union if union else 0.0
    dice = 2 * inter / (sa + sb) if sa + sb else 0.0
    return iou, dice


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 1.0


def raster_pixel_centres(geoms, shape: tuple[int, int], upsample: int = 1) -> np.ndarray:
    """Rasterize pixel-space geometries (x = col, y = row, pixel centres at integers).

    With ``upsample`` k each pixel becomes k x k subpixels; the result is
    (rows * k, cols * k).
    """
    rows, cols = shape
    k = upsample
    out = np.zeros((rows * k, cols * k), dtype=bool)
    for g in geoms:
        out |= scanline_raster(g, -0.5, -0.5, 1.0 / k, (rows * k, cols * k))
    return out


# ---------------------------------------------------------------------------
# Minimum-area rectangle by angle sweep
# ---------------------------------------------------------------------------


def _rect_area(hull: np.ndarray, theta: float) -> float:
    c, s = math.cos(theta), math.sin(theta)
    u = hull @ np.array([c, s])
    v = hull @ np.array([-s, c])
    return float(np.ptp(u) * np.ptp(v))


def sweep_mbr_area(points, step_deg: float = 0.1, zoom: bool = True, n_best: int = 6) -> float:
    """Minimum enclosing-rectangle area over a 0.1 degree sweep of [0, 90).

    With ``zoom`` the best few sweep angles are refined by bounded scalar
    minimisation inside their neighbouring steps, which removes the sweep's
    own discretisation error.
    """
    pts = np.asarray(points, dtype=float)
    try:
        hull = pts[ConvexHull(pts).vertices]
    except Exception:
        hull = pts
    thetas = np.radians(np.arange(0.0, 90.0, step_deg))
    areas = np.array([_rect_area(hull, t) for t in thetas])
    best = float(areas.min())
    if not zoom:
        return best
    d = math.radians(step_deg)
    for i in np.argsort(areas)[:n_best]:
        res = minimize_scalar(
            lambda t: _rect_area(hull, t),
            bounds=(thetas[i] - d, thetas[i] + d),
            method="bounded",
            options={"xatol": 1e-13},
        )
        best = min(best, float(res.fun))
    return best


# ---------------------------------------------------------------------------
# Random shapes
# ---------------------------------------------------------------------------


def star_polygon(rng: np.random.Generator, centre=(0.0, 0.0), r_min: float = 0.5, r_max: float = 2.0, n_min: int = 3, n_max: int = 12):
    """Random simple polygon: sorted angles with random radii around a centre."""
    from shapely.geometry import Polygon

    n = int(rng.integers(n_min, n_max + 1))
    while True:
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        gaps = np.diff(np.append(ang, ang[0] + 2 * np.pi))
        if gaps.max() < 0.9 * np.pi:  # centre stays inside the kernel
            break
    # keep angles distinct so the ring is simple
    ang = ang + np.arange(n) * 1e-6
    r = rng.uniform(r_min, r_max, n)
    xy = np.column_stack((centre[0] + r * np.cos(ang), centre[1] + r * np.sin(ang)))
    return Polygon(xy)


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def circular_diff_deg(a: float, b: float) -> float:
    d = (a - b) % 360.0
    return min(d, 360.0 - d)
