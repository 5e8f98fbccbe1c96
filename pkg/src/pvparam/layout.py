"""Module layout inference on a virtual grid aligned to the footprint MBR.

Every template is tried in portrait and landscape; the up-slope module
dimension is foreshortened by cos(tilt). Cells are accepted when most of
their area overlaps the footprint, and the candidate whose merged cells best
match the footprint (IoU / (1 + Hausdorff)) wins.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import shapely
from shapely.geometry import Polygon

from ._validation import check_tilt
from .geometry import ArrayPolygon, OrientedRectangle, as_geometry, intersection_areas, minimal_area_rectangle
from .metrics import DEFAULT_HD_STEP_M, area_iou, hausdorff_distance

PORTRAIT, LANDSCAPE = "portrait", "landscape"
ORIENTATIONS = (PORTRAIT, LANDSCAPE)
SCORE_TIE_TOL = 1e-9


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class ModuleTemplate:
    index: int
    label: str
    height_mm: float
    width_mm: float
    cell_count: int
    material: str
    rated_power_w: float


# index, label, height [mm], width [mm], cells, material
CEC_TEMPLATE_ROWS: tuple[tuple[int, str, int, int, int, str], ...] = (
    (0, "Mono-c-Si_0.017_128", 2067, 1046, 128, "Mono-c-Si"),
    (1, "Mono-c-Si_0.017_96", 1559, 1046, 96, "Mono-c-Si"),
    (2, "Mono-c-Si_0.022_72", 1620, 980, 72, "Mono-c-Si"),
    (3, "Mono-c-Si_0.025_72", 1924, 954, 72, "Mono-c-Si"),
    (4, "Mono-c-Si_0.026_60", 1620, 980, 60, "Mono-c-Si"),
    (5, "Mono-c-Si_0.026_72", 1893, 971, 72, "Mono-c-Si"),
    (6, "Mono-c-Si_0.026_96", 1943, 1297, 96, "Mono-c-Si"),
    (7, "Mono-c-Si_0.027_60", 1644, 979, 60, "Mono-c-Si"),
    (8, "Mono-c-Si_0.027_72", 1966, 1000, 72, "Mono-c-Si"),
    (9, "Mono-c-Si_0.027_96", 1980, 1300, 96, "Mono-c-Si"),
    (10, "Mono-c-Si_0.028_60", 1680, 996, 60, "Mono-c-Si"),
    (11, "Mono-c-Si_0.028_72", 2000, 1000, 72, "Mono-c-Si"),
    (12, "Mono-c-Si_0.033_60", 1960, 998, 72, "Mono-c-Si"),
    (13, "Multi-c-Si_0.024_72", 1864, 932, 72, "Multi-c-Si"),
    (14, "Multi-c-Si_0.025_72", 1924, 954, 72, "Multi-c-Si"),
    (15, "Multi-c-Si_0.026_60", 1614, 954, 60, "Multi-c-Si"),
    (16, "Multi-c-Si_0.026_72", 1934, 970, 72, "Multi-c-Si"),
    (17, "Multi-c-Si_0.026_96", 1943, 1297, 96, "Multi-c-Si"),
    (18, "Multi-c-Si_0.027_60", 1640, 998, 60, "Multi-c-Si"),
    (19, "Multi-c-Si_0.027_72", 1970, 988, 72, "Multi-c-Si"),
    (20, "Multi-c-Si_0.028_60", 1670, 1000, 60, "Multi-c-Si"),
    (21, "Multi-c-Si_0.028_72", 1994, 1000, 72, "Multi-c-Si"),
    (22, "Multi-c-Si_0.033_60", 1960, 998, 60, "Multi-c-Si"),
)


def label_rated_power_w(label: str, cell_count: int) -> float:
    """Default rated power: the label's middle token read as kW per cell, times cells.

    This is an interpretation of the label, not a datasheet value; override
    it with a template CSV when real ratings are known.
    """
    return round(float(label.split("_")[1]) * cell_count * 1000.0, 6)


def builtin_module_templates(rated_power_w: dict[int, float] | None = None) -> list[ModuleTemplate]:
    overrides = rated_power_w or {}
    return [
        ModuleTemplate(i, lab, float(h), float(w), n, mat, float(overrides.get(i, label_rated_power_w(lab, n))))
        for i, lab, h, w, n, mat in CEC_TEMPLATE_ROWS
    ]


TEMPLATE_CSV_HEADER = ["index", "label", "height_mm", "width_mm", "cell_count", "material", "rated_power_w"]


def read_templates_csv(path) -> list[ModuleTemplate]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TEMPLATE_CSV_HEADER:
            raise LayoutError(f"{path}: template header must be {','.join(TEMPLATE_CSV_HEADER)}")
        out = []
        for row in reader:
            t = ModuleTemplate(
                int(row["index"]), row["label"], float(row["height_mm"]), float(row["width_mm"]),
                int(row["cell_count"]), row["material"], float(row["rated_power_w"]),
            )
            if t.height_mm <= 0 or t.width_mm <= 0 or t.cell_count <= 0 or t.rated_power_w <= 0:
                raise LayoutError(f"{path}: template {t.index} has non-positive fields")
            out.append(t)
    return out


def write_templates_csv(path, templates: Sequence[ModuleTemplate]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TEMPLATE_CSV_HEADER)
        for t in templates:
            w.writerow([t.index, t.label, f"{t.height_mm:.15g}", f"{t.width_mm:.15g}", t.cell_count, t.material, f"{t.rated_power_w:.15g}"])


@dataclass(frozen=True)
class CellDimensions:
    along_mbr_long_m: float
    along_mbr_short_m: float
    orientation: str
    gap_m: float = 0.0
    foreshortened_axis: str = "short"

    def swapped(self) -> "CellDimensions":
        axis = "long" if self.foreshortened_axis == "short" else "short"
        return replace(self, along_mbr_long_m=self.along_mbr_short_m, along_mbr_short_m=self.along_mbr_long_m, foreshortened_axis=axis)


@dataclass(frozen=True)
class LayoutParams:
    coverage_tau: float = 0.5
    gap_m: float = 0.0
    grid_alignment: str = "mbr_short"  # or "downslope"
    anchor_sweep: int = 1
    hd_step_m: float = DEFAULT_HD_STEP_M
    hd_normalize: bool = False


@dataclass
class ModuleLayout:
    template_index: int
    orientation: str
    accepted_cells: list[np.ndarray]
    module_count: int
    layout_polygon: object  # shapely (Multi)Polygon, empty when no cells
    score: float
    capacity_w: float
    iou: float = 0.0
    hd_m: float = math.inf
    n_candidates: int = 0
    candidates: list[tuple[int, str, int, float]] = field(default_factory=list, repr=False)


def plan_cell_dimensions(template: ModuleTemplate, orientation: str, tilt_deg: float, gap_m: float = 0.0) -> CellDimensions:
    """Plan-view cell: the up-slope module edge shrinks by cos(tilt).

    Portrait runs the module height up-slope, landscape its width. The
    foreshortened extent sits on the MBR short axis.
    """
    tilt = check_tilt(tilt_deg)
    if gap_m < 0:
        raise LayoutError("gap_m must be >= 0")
    c = math.cos(math.radians(tilt))
    h, w = template.height_mm / 1000.0, template.width_mm / 1000.0
    if orientation == PORTRAIT:
        across, upslope = w, h * c
    elif orientation == LANDSCAPE:
        across, upslope = h, w * c
    else:
        raise LayoutError(f"unknown orientation {orientation!r}")
    return CellDimensions(across, upslope, orientation, gap_m, "short")


_CORNER_SIGNS = ((-1, -1), (1, -1), (1, 1), (-1, 1))


def _anchor_signs(geom, mbr: OrientedRectangle) -> tuple[int, int]:
    """MBR corner whose quadrant holds the most footprint area.

    The choice depends only on the shape, so rotating or mirroring the
    footprint moves the anchor with it. Exact ties (rectangles and other
    symmetric shapes) fall back to the frame order, which is harmless there.
    """
    c = np.asarray(mbr.center)
    u, v = mbr.axes
    a, b = mbr.half_extents
    quads = shapely.polygons(
        np.array([[c, c + su * a * u, c + su * a * u + sv * b * v, c + sv * b * v] for su, sv in _CORNER_SIGNS])
    )
    areas = intersection_areas(quads, geom)
    tol = 1e-9 * max(float(areas.max()), 1e-300)
    best = int(np.flatnonzero(areas >= areas.max() - tol)[0])
    return _CORNER_SIGNS[best]


def _grid_frame(mbr: OrientedRectangle, geom=None):
    """Anchor corner plus inward unit axes (along MBR long, along MBR short)."""
    u, v = mbr.axes
    a, b = mbr.half_extents
    su, sv = _anchor_signs(geom, mbr) if geom is not None else (-1, -1)
    anchor = np.asarray(mbr.center) + su * a * u + sv * b * v
    return anchor, -su * u, -sv * v, 2 * a, 2 * b


def place_virtual_grid(footprint, mbr: OrientedRectangle, cell: CellDimensions, coverage_tau: float = 0.5, phase: tuple[float, float] = (0.0, 0.0)) -> list[np.ndarray]:
    """Accepted grid cells as (4, 2) corner arrays in map coordinates.

    The grid starts at the MBR corner whose quadrant is most covered by the
    footprint; columns run along the long axis and rows along the short axis.
    A cell is kept when ``area(cell & footprint) / area(cell) >= coverage_tau``.
    """
    if not 0 < coverage_tau <= 1:
        raise LayoutError("coverage_tau must be in (0, 1]")
    geom = as_geometry(footprint)
    anchor, u, v, len_u, len_v = _grid_frame(mbr, geom)
    cu, cv = cell.along_mbr_long_m, cell.along_mbr_short_m
    if cu > len_u * (1 + 1e-9) and cv > len_v * (1 + 1e-9):
        return []
    pu, pv = cu + cell.gap_m, cv + cell.gap_m
    off_u, off_v = phase[0] * pu, phase[1] * pv
    nu = int(math.ceil((len_u + off_u) / pu - 1e-9)) if len_u + off_u > 0 else 1
    nv = int(math.ceil((len_v + off_v) / pv - 1e-9)) if len_v + off_v > 0 else 1
    nu, nv = max(nu, 1), max(nv, 1)
    su = np.repeat(np.arange(nu) * pu - off_u, nv)
    sv = np.tile(np.arange(nv) * pv - off_v, nu)
    local = np.stack(
        [
            np.column_stack((su, sv)),
            np.column_stack((su + cu, sv)),
            np.column_stack((su + cu, sv + cv)),
            np.column_stack((su, sv + cv)),
        ],
        axis=1,
    )  # (n, 4, 2)
    if u[0] * v[1] - u[1] * v[0] < 0:
        local = local[:, ::-1]  # mirrored frame: keep corners counterclockwise
    world = anchor + local[..., :1] * u + local[..., 1:] * v
    overlap = intersection_areas(shapely.polygons(world), geom) / (cu * cv)
    keep = overlap >= coverage_tau * (1 - 1e-9)  # round-off must not reject a fully covered cell
    return [world[k] for k in np.flatnonzero(keep)]


def _downslope_on_long_axis(mbr: OrientedRectangle, bearing_deg: float) -> bool:
    u, v = mbr.axes
    b = math.radians(bearing_deg)
    d = np.array([math.sin(b), math.cos(b)])
    return abs(float(u @ d)) > abs(float(v @ d))


def _cells_union(cells: list[np.ndarray]):
    if not cells:
        return Polygon()
    return shapely.union_all(shapely.polygons(np.asarray(cells)))


def _choose(candidates):
    """Max score; ties (within SCORE_TIE_TOL) go to more modules, lower index, portrait."""
    top = max(c[0] for c in candidates)
    tied = [c for c in candidates if c[0] >= top - SCORE_TIE_TOL]
    return min(tied, key=lambda c: (-c[1], c[2], ORIENTATIONS.index(c[3])))


def infer_best_layout(
    footprint,
    tilt_deg: float,
    templates: Sequence[ModuleTemplate] | None = None,
    params: LayoutParams = LayoutParams(),
    downslope_bearing_deg: float | None = None,
) -> ModuleLayout:
    """Score every template x {portrait, landscape} candidate and keep the best."""
    tilt = check_tilt(tilt_deg)
    templates = list(templates) if templates is not None else builtin_module_templates()
    geom = as_geometry(footprint)
    if geom.is_empty or geom.area <= 0:
        raise LayoutError("footprint is empty")
    ext = np.concatenate([np.asarray(p.exterior.coords) for p in getattr(geom, "geoms", [geom])])
    mbr = minimal_area_rectangle(ext)
    swap = params.grid_alignment == "downslope" and downslope_bearing_deg is not None and _downslope_on_long_axis(mbr, downslope_bearing_deg)
    hd_scale = 2.0 * math.hypot(*mbr.half_extents) if params.hd_normalize else None
    n = max(1, int(params.anchor_sweep))
    phases = [(i / n, j / n) for i in range(n) for j in range(n)]

    scored = []
    for t in templates:
        for orient in ORIENTATIONS:
            cell = plan_cell_dimensions(t, orient, tilt, params.gap_m)
            if swap:
                cell = cell.swapped()
            best = None
            for ph in phases:
                cells = place_virtual_grid(geom, mbr, cell, params.coverage_tau, ph)
                if not cells:
                    cand = (0.0, 0, t.index, orient, cells, Polygon(), 0.0, math.inf)
                else:
                    union = _cells_union(cells)
                    iou = area_iou(union, geom)
                    hd = hausdorff_distance(union, geom, params.hd_step_m)
                    score = iou / (1.0 + (hd / hd_scale if hd_scale else hd))
                    cand = (score, len(cells), t.index, orient, cells, union, iou, hd)
                if best is None or cand[0] > best[0] + SCORE_TIE_TOL:
                    best = cand
            scored.append(best)

    score, count, index, orient, cells, union, iou, hd = _choose(scored)
    template = next(t for t in templates if t.index == index)
    return ModuleLayout(
        template_index=index,
        orientation=orient,
        accepted_cells=cells,
        module_count=count,
        layout_polygon=union,
        score=score,
        capacity_w=count * template.rated_power_w,
        iou=iou,
        hd_m=hd,
        n_candidates=len(scored),
        candidates=[(c[2], c[3], c[1], c[0]) for c in scored],
    )


def layout_capacity(layout: ModuleLayout, template: ModuleTemplate) -> float:
    if layout.template_index != template.index:
        raise LayoutError(f"layout uses template {layout.template_index}, got {template.index}")
    return layout.module_count * template.rated_power_w
