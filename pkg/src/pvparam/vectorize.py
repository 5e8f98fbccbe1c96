"""Binary PV masks to georeferenced footprint polygons.

Each connected group of PV pixels is approximated by its minimal-area
bounding rectangle, then corrected by alternately subtracting the rectangles
of mismatch regions and adding back rectangles of true PV pixels inside them.
All of that happens in pixel space; georeferencing is applied once at the end.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import shapely
from PIL import Image
from scipy import ndimage
from shapely.geometry import Polygon

from .geometry import (
    Affine,
    ArrayPolygon,
    GeometryError,
    minimal_area_rectangle,
    polygon_parts,
)

logger = logging.getLogger(__name__)

SNAP_GRID_PX = 1e-6


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class GeoreferencedMask:
    width: int
    height: int
    bits: np.ndarray  # (height, width) bool, row-major
    transform: Affine
    crs_id: str = ""

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if self.width <= 0 or self.height <= 0:
            raise MaskError("mask dimensions must be positive")
        if bits.shape != (self.height, self.width):
            raise MaskError(f"bits shape {bits.shape} != ({self.height}, {self.width})")
        if self.transform.determinant == 0:
            raise MaskError("world-file transform has zero determinant")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_array(cls, bits, transform=Affine(1, 0, 0, 0, 1, 0), crs_id="") -> "GeoreferencedMask":
        bits = np.asarray(bits, dtype=bool)
        return cls(bits.shape[1], bits.shape[0], bits, transform, crs_id)

    @property
    def pixel_area(self) -> float:
        return abs(self.transform.determinant)


@dataclass(frozen=True)
class PixelComponent:
    id: int
    pixels: np.ndarray  # (n, 2) int array of (row, col), lexicographically sorted

    @property
    def size(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class RefineParams:
    max_depth: int = 4
    stop_ratio: float = 0.02
    min_mismatch_px: int = 4
    min_component_px: int = 4
    min_area_m2: float = 1.2
    min_extent_m: float = 0.05
    connectivity: int = 8
    min_fill_ratio: float = 0.5


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def read_worldfile(path) -> Affine:
    try:
        lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise MaskError(f"cannot read world file {path}: {exc}") from exc
    if len(lines) != 6:
        raise MaskError(f"world file {path} must have 6 numeric lines, found {len(lines)}")
    try:
        values = [float(ln) for ln in lines]
    except ValueError as exc:
        raise MaskError(f"world file {path} has a non-numeric line") from exc
    if not all(math.isfinite(v) for v in values):
        raise MaskError(f"world file {path} has non-finite values")
    return Affine.from_worldfile(values)


def write_worldfile(path, transform: Affine) -> None:
    Path(path).write_text("".join(f"{v!r}\n" for v in transform.to_worldfile()))


def load_georeferenced_mask(image_path, worldfile_path, threshold: int = 128, crs_id: str = "") -> GeoreferencedMask:
    """Read an 8-bit grayscale PGM/PNG and its world file; pixels >= threshold are PV."""
    if not 0 <= threshold <= 255:
        raise MaskError("threshold must be in 0..255")
    try:
        with Image.open(image_path) as img:
            if img.mode != "L":
                raise MaskError(f"{image_path}: expected 8-bit single-channel image, got mode {img.mode}")
            data = np.asarray(img, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise MaskError(f"cannot read mask image {image_path}: {exc}") from exc
    transform = read_worldfile(worldfile_path)
    if transform.determinant == 0:
        raise MaskError("world-file transform has zero determinant")
    return GeoreferencedMask(data.shape[1], data.shape[0], data >= threshold, transform, crs_id)


def write_mask_pgm(path, bits) -> None:
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + (bits.astype(np.uint8) * 255).tobytes())


# ---------------------------------------------------------------------------
# Components
# ---------------------------------------------------------------------------


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    raise ValueError("connectivity must be 4 or 8")


def _labelled_regions(bits: np.ndarray, connectivity: int, min_px: int) -> list[np.ndarray]:
    """Pixel index arrays of each component, ordered by first pixel in raster order."""
    labels, n = ndimage.label(bits, structure=_structure(connectivity))
    if n == 0:
        return []
    rows, cols = np.nonzero(labels)
    lab = labels[rows, cols]
    order = np.argsort(lab, kind="stable")
    rows, cols, lab = rows[order], cols[order], lab[order]
    splits = np.flatnonzero(np.diff(lab)) + 1
    regions = [np.column_stack((r, c)) for r, c in zip(np.split(rows, splits), np.split(cols, splits))]
    # scipy labels in raster order of first encounter, which is (min row, min col of that row)
    return [reg for reg in regions if len(reg) >= min_px]


def extract_components(mask: GeoreferencedMask, min_component_px: int = 4, connectivity: int = 8) -> list[PixelComponent]:
    regions = _labelled_regions(mask.bits, connectivity, min_component_px)
    return [PixelComponent(i, reg) for i, reg in enumerate(regions)]


# ---------------------------------------------------------------------------
# Iterative MBR refinement
# ---------------------------------------------------------------------------


def _pixel_corner_hull_points(pixels: np.ndarray) -> np.ndarray:
    """Corners of the pixel squares; the hull of these is the hull of the region."""
    r, c = pixels[:, 0].astype(float), pixels[:, 1].astype(float)
    pts = np.concatenate(
        [
            np.column_stack((c - 0.5, r - 0.5)),
            np.column_stack((c + 0.5, r - 0.5)),
            np.column_stack((c + 0.5, r + 0.5)),
            np.column_stack((c - 0.5, r + 0.5)),
        ]
    )
    return np.unique(pts, axis=0)


def _region_mbr(pixels: np.ndarray, min_extent: float) -> Polygon:
    rect = minimal_area_rectangle(_pixel_corner_hull_points(pixels), min_extent=min_extent)
    return shapely.set_precision(rect.to_shapely(), SNAP_GRID_PX)


class _Window:
    """Local raster window holding the target pixels and pixel-centre coordinates."""

    def __init__(self, target: np.ndarray, row0: int, col0: int):
        self.target = target
        self.row0, self.col0 = row0, col0
        rr, cc = np.mgrid[0 : target.shape[0], 0 : target.shape[1]]
        self.xs = (cc + col0).astype(float)
        self.ys = (rr + row0).astype(float)

    def rasterize(self, geom) -> np.ndarray:
        if geom.is_empty:
            return np.zeros(self.target.shape, dtype=bool)
        minx, miny, maxx, maxy = geom.bounds
        out = np.zeros(self.target.shape, dtype=bool)
        r0 = max(int(math.floor(miny)) - self.row0, 0)
        r1 = min(int(math.ceil(maxy)) - self.row0 + 1, self.target.shape[0])
        c0 = max(int(math.floor(minx)) - self.col0, 0)
        c1 = min(int(math.ceil(maxx)) - self.col0 + 1, self.target.shape[1])
        if r0 >= r1 or c0 >= c1:
            return out
        out[r0:r1, c0:c1] = shapely.contains_xy(geom, self.xs[r0:r1, c0:c1], self.ys[r0:r1, c0:c1])
        return out

    def to_global(self, local: np.ndarray) -> np.ndarray:
        return local + np.array([self.row0, self.col0])


def _raster_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


def _rectangular_pieces(region: np.ndarray, win: _Window, params: RefineParams) -> list[Polygon]:
    """MBRs covering a mismatch region, bisecting regions that fill their MBR poorly.

    Ring- or L-shaped mismatch (e.g. one-pixel strips around a noisy edge)
    would otherwise get a single rectangle spanning the whole piece.
    """
    pts = win.to_global(region)
    rect = minimal_area_rectangle(_pixel_corner_hull_points(pts), min_extent=params.min_extent_m)
    if len(region) / max(rect.area, 1.0) >= params.min_fill_ratio or len(region) < 2 * params.min_mismatch_px:
        return [shapely.set_precision(rect.to_shapely(), SNAP_GRID_PX)]
    u, _ = rect.axes
    proj = (pts[:, 1] - rect.center[0]) * u[0] + (pts[:, 0] - rect.center[1]) * u[1]
    pieces = []
    for half in (proj < 0, proj >= 0):
        sub = np.zeros(win.target.shape, dtype=bool)
        sub[region[half, 0], region[half, 1]] = True
        for reg in _labelled_regions(sub, params.connectivity, params.min_mismatch_px):
            pieces.extend(_rectangular_pieces(reg, win, params))
    return pieces


def _decompose(piece, sign: int, depth: int, win: _Window, comp_area: int, params: RefineParams, stats: dict):
    """Geometry of ``piece`` minus the retained sub-pieces of opposite sign.

    For an additive piece the mismatch is covered non-PV pixels; for a
    subtractive piece it is covered PV pixels, which get added back.
    """
    stats["depth"] = max(stats["depth"], depth)
    if depth >= params.max_depth:
        return piece
    covered = win.rasterize(piece)
    wrong = covered & (~win.target if sign > 0 else win.target)
    n_wrong = np.count_nonzero(wrong)
    if n_wrong == 0 or (depth == 0 and n_wrong < params.stop_ratio * comp_area):
        return piece
    regions = _labelled_regions(wrong, params.connectivity, params.min_mismatch_px)
    kept = []
    for reg in regions:
        for rect in _rectangular_pieces(reg, win, params):
            child = rect.intersection(piece)
            if child.is_empty or child.area == 0:
                continue
            child = _decompose(child, -sign, depth + 1, win, comp_area, params, stats)
            hit = win.rasterize(child) & covered
            # keep only sub-pieces that flip more wrong pixels than right ones
            if np.count_nonzero(hit & wrong) > np.count_nonzero(hit & ~wrong):
                kept.append(child)
    if not kept:
        return piece
    return shapely.set_precision(piece.difference(shapely.union_all(kept)), SNAP_GRID_PX)


def refine_component_geometry(component: PixelComponent, params: RefineParams = RefineParams()):
    """Refined shapely geometry in pixel coordinates plus diagnostics."""
    px = component.pixels
    p1 = _region_mbr(px, params.min_extent_m)
    minx, miny, maxx, maxy = p1.bounds
    row0, col0 = int(math.floor(miny)) - 1, int(math.floor(minx)) - 1
    h = int(math.ceil(maxy)) - row0 + 2
    w = int(math.ceil(maxx)) - col0 + 2
    target = np.zeros((h, w), dtype=bool)
    target[px[:, 0] - row0, px[:, 1] - col0] = True
    win = _Window(target, row0, col0)
    stats = {"depth": 0, "fallback": False}
    try:
        geom = _decompose(p1, +1, 0, win, len(px), params, stats)
        geom = shapely.make_valid(geom) if not geom.is_valid else geom
        parts = polygon_parts(geom)
        if not parts:
            raise GeometryError("refinement produced empty geometry")
        geom = shapely.union_all(parts)
    except (GeometryError, shapely.errors.GEOSException) as exc:
        logger.warning("refinement failed for component %d, falling back to MBR: %s", component.id, exc)
        stats["fallback"] = True
        return p1, stats
    if _raster_iou(win.rasterize(geom), target) < _raster_iou(win.rasterize(p1), target):
        stats["fallback"] = True
        return p1, stats
    return geom, stats


def refine_component_polygon(component: PixelComponent, params: RefineParams = RefineParams()) -> ArrayPolygon:
    """Refined footprint in pixel coordinates.

    When the refined shape splits into several parts the largest is returned;
    ``vectorize_mask`` keeps every part.
    """
    geom, stats = refine_component_geometry(component, params)
    parts = sorted(polygon_parts(geom), key=lambda g: -g.area)
    return ArrayPolygon.from_shapely(parts[0], id=str(component.id), meta=dict(stats, parts=len(parts)))


def vectorize_mask(mask: GeoreferencedMask, params: RefineParams = RefineParams(), id_prefix: str = "pv") -> list[ArrayPolygon]:
    """Connected components -> refined polygons -> map coordinates."""
    out = []
    for comp in extract_components(mask, params.min_component_px, params.connectivity):
        geom, stats = refine_component_geometry(comp, params)
        for part in sorted(polygon_parts(geom), key=lambda g: (g.bounds[1], g.bounds[0])):
            mapped = mask.transform.transform_geometry(part)
            if mapped.area < params.min_area_m2:
                continue
            out.append(ArrayPolygon.from_shapely(mapped, crs_id=mask.crs_id, meta=dict(stats, component=comp.id)))
    return [p.with_id(f"{id_prefix}-{i:04d}") for i, p in enumerate(out)]
