"""Tilt and azimuth of PV arrays from footprint-clipped point clouds."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import shapely

from ._validation import check_points3d
from .geometry import ArrayPolygon


class OrientationError(ValueError):
    pass


@dataclass(frozen=True)
class PointSet:
    points: np.ndarray  # (n, 3)
    crs_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "points", check_points3d(self.points))

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class FitParams:
    min_points: int = 10
    iterations: int = 200
    inlier_dist_m: float = 0.10
    flat_threshold_deg: float = 5.0


@dataclass(frozen=True)
class PlaneFit:
    normal: tuple[float, float, float]
    offset: float
    inlier_count: int
    rms_residual_m: float
    method: str  # least_squares | ransac_refit | fallback


@dataclass(frozen=True)
class OrientationEstimate:
    tilt_deg: float
    azimuth_deg: float
    confidence: str  # ok | flat_roof | low_points | fallback


def read_pointcloud_csv(path, crs_id: str = "") -> PointSet:
    """CSV with header ``x,y,z``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:3] != ["x", "y", "z"]:
            raise OrientationError(f"{path}: expected header x,y,z, got {header}")
        rows = [r for r in reader if r]
    pts = np.array(rows, dtype=float).reshape(-1, 3) if rows else np.empty((0, 3))
    return PointSet(pts, crs_id)


def write_pointcloud_csv(path, cloud: PointSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("x,y,z\n")
        for x, y, z in cloud.points:
            fh.write(f"{x:.4f},{y:.4f},{z:.4f}\n")


def clip_pointset(cloud: PointSet, footprint: ArrayPolygon, tol: float = 1e-9) -> PointSet:
    """Points whose (x, y) fall inside the footprint or within ``tol`` of its boundary."""
    if cloud.crs_id and footprint.crs_id and cloud.crs_id != footprint.crs_id:
        raise OrientationError(f"CRS mismatch: cloud {cloud.crs_id!r} vs footprint {footprint.crs_id!r}")
    pts = cloud.points
    if len(pts) == 0:
        return PointSet(pts, cloud.crs_id)
    geom = footprint.to_shapely()
    minx, miny, maxx, maxy = geom.bounds
    near = (pts[:, 0] >= minx - tol) & (pts[:, 0] <= maxx + tol) & (pts[:, 1] >= miny - tol) & (pts[:, 1] <= maxy + tol)
    keep = np.zeros(len(pts), dtype=bool)
    idx = np.flatnonzero(near)
    if len(idx):
        x, y = pts[idx, 0], pts[idx, 1]
        inside = shapely.contains_xy(geom, x, y)
        rest = ~inside
        if rest.any():
            boundary = geom.boundary
            d = shapely.distance(boundary, shapely.points(x[rest], y[rest]))
            inside[np.flatnonzero(rest)[d <= tol]] = True
        keep[idx] = inside
    return PointSet(pts[keep], cloud.crs_id)


def _tls_plane(pts: np.ndarray) -> tuple[np.ndarray, float]:
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    normal = vt[-1]
    if normal[2] < 0:
        normal = -normal
    normal = normal / np.linalg.norm(normal)
    return normal, float(normal @ centroid)


def _plane_fit(pts: np.ndarray, normal: np.ndarray, offset: float, method: str) -> PlaneFit:
    resid = pts @ normal - offset
    rms = float(np.sqrt(np.mean(resid**2))) if len(pts) else 0.0
    return PlaneFit(tuple(float(v) for v in normal), float(offset), len(pts), rms, method)


def fit_plane_robust(points: PointSet, params: FitParams = FitParams(), seed: int = 0) -> PlaneFit:
    """RANSAC consensus followed by a total-least-squares refit on the inliers.

    Degenerate input (no non-collinear sample) falls back to a horizontal
    plane at the median height.
    """
    pts = points.points
    n = len(pts)
    if n < max(params.min_points, 3):
        raise OrientationError(f"need at least {max(params.min_points, 3)} points, got {n}")
    scale = float(np.ptp(pts, axis=0).max()) or 1.0
    rng = np.random.default_rng(seed)

    best_mask = None
    best_count = -1
    for _ in range(params.iterations):
        i, j, k = rng.choice(n, 3, replace=False)
        normal = np.cross(pts[j] - pts[i], pts[k] - pts[i])
        norm = np.linalg.norm(normal)
        if norm <= 1e-9 * scale * scale:
            continue
        normal /= norm
        mask = np.abs((pts - pts[i]) @ normal) <= params.inlier_dist_m
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask

    if best_mask is None:
        if params.iterations == 0 and np.linalg.matrix_rank(pts - pts.mean(axis=0), tol=1e-9 * scale) >= 2:
            normal, offset = _tls_plane(pts)
            return _plane_fit(pts, normal, offset, "least_squares")
        z = float(np.median(pts[:, 2]))
        return _plane_fit(pts, np.array([0.0, 0.0, 1.0]), z, "fallback")

    inliers = pts[best_mask]
    normal, offset = _tls_plane(inliers)
    # one consensus update against the refined plane
    mask = np.abs(pts @ normal - offset) <= params.inlier_dist_m
    if mask.sum() >= 3 and not np.array_equal(mask, best_mask):
        inliers = pts[mask]
        normal, offset = _tls_plane(inliers)
    method = "least_squares" if len(inliers) == n else "ransac_refit"
    return _plane_fit(inliers, normal, offset, method)


def plane_to_orientation(plane: PlaneFit, params: FitParams = FitParams()) -> OrientationEstimate:
    """Tilt from the normal's zenith angle; azimuth is the compass bearing the surface faces."""
    nx, ny, nz = plane.normal
    tilt = math.degrees(math.acos(min(1.0, max(-1.0, nz))))
    if tilt >= 90.0:
        tilt = math.nextafter(90.0, 0.0)
    if plane.method == "fallback":
        return OrientationEstimate(tilt, 180.0, "fallback")
    if tilt < params.flat_threshold_deg:
        return OrientationEstimate(tilt, 180.0, "flat_roof")
    az = math.degrees(math.atan2(nx, ny)) % 360.0
    if az >= 360.0:
        az = 0.0
    return OrientationEstimate(tilt, az, "ok")


def estimate_orientation(cloud: PointSet, footprint: ArrayPolygon, params: FitParams = FitParams(), seed: int = 0):
    """Clip, fit and convert; too few points yields a flagged horizontal estimate."""
    clipped = clip_pointset(cloud, footprint)
    if len(clipped) < max(params.min_points, 3):
        return None, OrientationEstimate(0.0, 180.0, "low_points"), len(clipped)
    plane = fit_plane_robust(clipped, params, seed)
    return plane, plane_to_orientation(plane, params), len(clipped)


def angle_between_normals(n1, n2) -> float:
    """Dihedral angle in degrees between two plane normals (sign-agnostic)."""
    n1, n2 = np.asarray(n1, float), np.asarray(n2, float)
    c = abs(float(n1 @ n2) / (np.linalg.norm(n1) * np.linalg.norm(n2)))
    return math.degrees(math.acos(min(1.0, c)))


def normal_from_tilt_azimuth(tilt_deg: float, azimuth_deg: float) -> np.ndarray:
    t, a = math.radians(tilt_deg), math.radians(azimuth_deg)
    return np.array([math.sin(t) * math.sin(a), math.sin(t) * math.cos(a), math.cos(t)])


def write_orientations_csv(path, rows) -> None:
    """rows: iterable of (id, OrientationEstimate, PlaneFit | None, n_points)."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        fh.write("id,tilt_deg,azimuth_deg,confidence,inlier_count,rms_residual_m,n_points,method\n")
        for pid, est, plane, npts in rows:
            inl = plane.inlier_count if plane else 0
            rms = plane.rms_residual_m if plane else 0.0
            method = plane.method if plane else "none"
            fh.write(f"{pid},{est.tilt_deg:.6f},{est.azimuth_deg:.6f},{est.confidence},{inl},{rms:.6f},{npts},{method}\n")


def read_orientations_csv(path) -> dict[str, OrientationEstimate]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {
            r["id"]: OrientationEstimate(float(r["tilt_deg"]), float(r["azimuth_deg"]), r["confidence"])
            for r in csv.DictReader(fh)
        }
