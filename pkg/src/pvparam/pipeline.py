"""PV system records, GeoJSON/CSV exchange formats and region aggregation."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import shapely
from shapely.geometry import MultiPolygon, Polygon

from .geometry import ArrayPolygon, GeometryError
from .layout import ModuleLayout, ModuleTemplate
from .orientation import OrientationEstimate

UNASSIGNED = "_unassigned"
PV_LAYER_PROPERTIES = (
    "id",
    "tilt_deg",
    "azimuth_deg",
    "orientation_confidence",
    "template_label",
    "mounting_orientation",
    "module_count",
    "capacity_wp",
    "matching_score",
    "area_m2",
)
DECIMALS = 6

_UMASK = os.umask(0)
os.umask(_UMASK)


class PipelineError(ValueError):
    pass


@dataclass
class PVSystemRecord:
    id: str
    footprint: ArrayPolygon
    orientation: OrientationEstimate
    layout: ModuleLayout
    capacity_w: float
    template_label: str = ""
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.capacity_w != self.layout.capacity_w:
            raise PipelineError(f"{self.id}: capacity_w {self.capacity_w} != layout capacity {self.layout.capacity_w}")

    @classmethod
    def from_layout(cls, footprint: ArrayPolygon, orientation: OrientationEstimate, layout: ModuleLayout, templates: Sequence[ModuleTemplate], provenance=None):
        label = next((t.label for t in templates if t.index == layout.template_index), "")
        return cls(footprint.id, footprint, orientation, layout, layout.capacity_w, label, dict(provenance or {}))

    @property
    def tilt_deg(self) -> float:
        return self.orientation.tilt_deg

    @property
    def azimuth_deg(self) -> float:
        return self.orientation.azimuth_deg


@dataclass(frozen=True)
class NeighborhoodRecord:
    region_id: str
    boundary: ArrayPolygon
    recorded_kwp: float | None = None
    extra_parts: tuple[ArrayPolygon, ...] = ()

    def __post_init__(self):
        if self.recorded_kwp is not None and not self.recorded_kwp >= 0:
            raise PipelineError(f"region {self.region_id}: recorded_kwp must be >= 0")
        for part in (self.boundary, *self.extra_parts):
            part.validate()

    def geometry(self):
        if not self.extra_parts:
            return self.boundary.to_shapely()
        return MultiPolygon([p.to_shapely() for p in (self.boundary, *self.extra_parts)])


# ---------------------------------------------------------------------------
# Region aggregation
# ---------------------------------------------------------------------------


def assign_regions(points: np.ndarray, regions: Sequence[NeighborhoodRecord]) -> list[str]:
    """Region id per (x, y) point; boundary points count, smallest region wins overlaps."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if not regions:
        return [UNASSIGNED] * len(pts)
    geoms = [r.geometry() for r in regions]
    areas = np.array([g.area for g in geoms])
    inside = np.array([shapely.contains_xy(g, pts[:, 0], pts[:, 1]) for g in geoms]).reshape(len(geoms), len(pts))
    touch = np.array([shapely.intersects_xy(g, pts[:, 0], pts[:, 1]) for g in geoms]).reshape(len(geoms), len(pts))
    out = []
    for j in range(len(pts)):
        hits = np.flatnonzero(inside[:, j])
        if len(hits) > 1:
            ids = ", ".join(regions[k].region_id for k in hits)
            warnings.warn(f"point {tuple(pts[j])} lies in overlapping regions {ids}; using the smallest", stacklevel=2)
        if len(hits) == 0:
            hits = np.flatnonzero(touch[:, j])
        if len(hits) == 0:
            out.append(UNASSIGNED)
            continue
        k = min(hits, key=lambda i: (areas[i], i))
        out.append(regions[k].region_id)
    return out


def aggregate_by_neighborhood(systems: Sequence[PVSystemRecord], regions: Sequence[NeighborhoodRecord]) -> list[tuple[str, float]]:
    """Per-region kWp from footprint centroids, in region order; ``_unassigned`` last if used."""
    ids = [r.region_id for r in regions]
    if len(set(ids)) != len(ids):
        raise PipelineError("region ids must be unique")
    crs = {s.footprint.crs_id for s in systems} | {r.boundary.crs_id for r in regions}
    crs.discard("")
    if len(crs) > 1:
        raise PipelineError(f"systems and regions use different CRS: {sorted(crs)}")
    centroids = np.array([s.footprint.centroid() for s in systems]).reshape(-1, 2)
    owner = assign_regions(centroids, regions)
    buckets: dict[str, list[float]] = {rid: [] for rid in ids}
    for s, rid in zip(systems, owner):
        buckets.setdefault(rid, []).append(s.capacity_w)
    out = [(rid, math.fsum(buckets[rid]) / 1000.0) for rid in ids]
    if buckets.get(UNASSIGNED):
        out.append((UNASSIGNED, math.fsum(buckets[UNASSIGNED]) / 1000.0))
    return out


# ---------------------------------------------------------------------------
# Serialization helpers
# ---------------------------------------------------------------------------


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(v):
    v = round(float(v), DECIMALS)
    if not math.isfinite(v):
        raise PipelineError(f"cannot serialize non-finite number {v}")
    return 0.0 if v == 0 else v


def _ring_coords(ring) -> list[list[float]]:
    pts = [[_num(x), _num(y)] for x, y in ring]
    return pts + [pts[0]]


def polygon_geojson(poly: ArrayPolygon) -> dict:
    return {"type": "Polygon", "coordinates": [_ring_coords(poly.exterior)] + [_ring_coords(h) for h in poly.holes]}


def geometry_to_geojson(geom) -> dict:
    if isinstance(geom, Polygon):
        return polygon_geojson(ArrayPolygon.from_shapely(geom))
    if isinstance(geom, MultiPolygon):
        return {"type": "MultiPolygon", "coordinates": [polygon_geojson(ArrayPolygon.from_shapely(p))["coordinates"] for p in geom.geoms]}
    raise PipelineError(f"unsupported geometry {geom.geom_type}")


def polygons_from_geojson(geometry: dict, id="", crs_id="") -> list[ArrayPolygon]:
    kind = geometry.get("type") if geometry else None
    if kind == "Polygon":
        polys = [geometry["coordinates"]]
    elif kind == "MultiPolygon":
        polys = geometry["coordinates"]
    else:
        raise PipelineError(f"feature {id!r}: expected Polygon or MultiPolygon, got {kind}")
    return [ArrayPolygon.from_rings(rings[0], rings[1:], id, crs_id) for rings in polys]


def feature_collection(features: list[dict], crs_id: str = "") -> str:
    doc: dict = {"type": "FeatureCollection"}
    if crs_id:
        doc["crs"] = {"type": "name", "properties": {"name": crs_id}}
    doc["features"] = features
    return json.dumps(doc, indent=1, ensure_ascii=False) + "\n"


def _load_collection(path) -> tuple[list[dict], str]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PipelineError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("type") != "FeatureCollection":
        raise PipelineError(f"{path}: expected a GeoJSON FeatureCollection")
    crs = ((doc.get("crs") or {}).get("properties") or {}).get("name", "")
    return list(doc.get("features") or []), crs


# ---------------------------------------------------------------------------
# Footprint layer
# ---------------------------------------------------------------------------


def footprints_geojson(polys: Sequence[ArrayPolygon]) -> str:
    feats = []
    for p in polys:
        props = {"id": p.id, "area_m2": _num(p.area_m2)}
        for key in ("depth", "fallback", "component"):
            if key in p.meta:
                props[key] = p.meta[key]
        feats.append({"type": "Feature", "properties": props, "geometry": polygon_geojson(p)})
    crs = next((p.crs_id for p in polys if p.crs_id), "")
    return feature_collection(feats, crs)


def read_footprints(path) -> list[ArrayPolygon]:
    feats, crs = _load_collection(path)
    out = []
    for f in feats:
        props = f.get("properties") or {}
        parts = polygons_from_geojson(f.get("geometry"), str(props.get("id", "")), crs)
        if len(parts) != 1:
            raise PipelineError(f"{path}: footprint {props.get('id')!r} must be a single polygon")
        out.append(parts[0])
    ids = [p.id for p in out]
    if len(set(ids)) != len(ids):
        raise PipelineError(f"{path}: footprint ids are not unique")
    return out


# ---------------------------------------------------------------------------
# PV layer
# ---------------------------------------------------------------------------


def pv_layer_properties(rec: PVSystemRecord) -> dict:
    return {
        "id": rec.id,
        "tilt_deg": _num(rec.orientation.tilt_deg),
        "azimuth_deg": _num(rec.orientation.azimuth_deg),
        "orientation_confidence": rec.orientation.confidence,
        "template_label": rec.template_label,
        "mounting_orientation": rec.layout.orientation,
        "module_count": int(rec.layout.module_count),
        "capacity_wp": _num(rec.capacity_w),
        "matching_score": _num(rec.layout.score),
        "area_m2": _num(rec.footprint.area_m2),
    }


def pv_layer_geojson(systems: Sequence[PVSystemRecord]) -> str:
    ids = [s.id for s in systems]
    if len(set(ids)) != len(ids):
        raise PipelineError("PV system ids must be unique within a layer")
    feats = [{"type": "Feature", "properties": pv_layer_properties(s), "geometry": polygon_geojson(s.footprint)} for s in systems]
    crs = next((s.footprint.crs_id for s in systems if s.footprint.crs_id), "")
    return feature_collection(feats, crs)


def export_pv_layer(systems: Sequence[PVSystemRecord], path) -> None:
    try:
        atomic_write_text(path, pv_layer_geojson(systems))
    except OSError as exc:
        raise PipelineError(f"cannot write PV layer to {path}: {exc}") from exc


def import_pv_layer(path, templates: Sequence[ModuleTemplate] = ()) -> list[PVSystemRecord]:
    feats, crs = _load_collection(path)
    by_label = {t.label: t.index for t in templates}
    out = []
    for f in feats:
        props = f.get("properties") or {}
        missing = [k for k in PV_LAYER_PROPERTIES if k not in props]
        if missing:
            raise PipelineError(f"{path}: feature {props.get('id')!r} lacks {', '.join(missing)}")
        pid = str(props["id"])
        (fp,) = polygons_from_geojson(f.get("geometry"), pid, crs)
        fp = replace(fp, area_m2=float(props["area_m2"]))  # keep the stored area, not one recomputed from rounded vertices
        ori = OrientationEstimate(float(props["tilt_deg"]), float(props["azimuth_deg"]), str(props["orientation_confidence"]))
        cap = float(props["capacity_wp"])
        layout = ModuleLayout(
            template_index=by_label.get(props["template_label"], -1),
            orientation=str(props["mounting_orientation"]),
            accepted_cells=[],
            module_count=int(props["module_count"]),
            layout_polygon=Polygon(),
            score=float(props["matching_score"]),
            capacity_w=cap,
        )
        out.append(PVSystemRecord(pid, fp, ori, layout, cap, str(props["template_label"]), {"source": Path(path).name}))
    return out


def modules_geojson(systems: Sequence[tuple[str, ModuleLayout]], crs_id: str = "") -> str:
    feats = []
    for sid, lay in systems:
        for k, cell in enumerate(lay.accepted_cells):
            ring = [[_num(x), _num(y)] for x, y in cell]
            feats.append(
                {
                    "type": "Feature",
                    "properties": {"id": f"{sid}-m{k:03d}", "system_id": sid, "orientation": lay.orientation},
                    "geometry": {"type": "Polygon", "coordinates": [ring + [ring[0]]]},
                }
            )
    return feature_collection(feats, crs_id)


# ---------------------------------------------------------------------------
# Regions and per-region CSVs
# ---------------------------------------------------------------------------


def read_regions_geojson(path) -> list[NeighborhoodRecord]:
    feats, crs = _load_collection(path)
    out = []
    for f in feats:
        props = f.get("properties") or {}
        if "region_id" not in props:
            raise PipelineError(f"{path}: every region needs a region_id property")
        rid = str(props["region_id"])
        rec = props.get("recorded_kwp")
        try:
            parts = polygons_from_geojson(f.get("geometry"), rid, crs)
            out.append(NeighborhoodRecord(rid, parts[0], None if rec is None else float(rec), tuple(parts[1:])))
        except GeometryError as exc:
            raise PipelineError(f"{path}: region {rid!r} is invalid: {exc}") from exc
    ids = [r.region_id for r in out]
    if len(set(ids)) != len(ids):
        raise PipelineError(f"{path}: region ids are not unique")
    return out


def regions_geojson(regions: Sequence[NeighborhoodRecord]) -> str:
    feats = []
    for r in regions:
        props = {"region_id": r.region_id}
        if r.recorded_kwp is not None:
            props["recorded_kwp"] = _num(r.recorded_kwp)
        geom = geometry_to_geojson(r.geometry())
        feats.append({"type": "Feature", "properties": props, "geometry": geom})
    crs = next((r.boundary.crs_id for r in regions if r.boundary.crs_id), "")
    return feature_collection(feats, crs)


def _read_two_column_csv(path, header: list[str]) -> list[tuple[str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        got = [h.strip() for h in next(reader, [])]
        if got != header:
            raise PipelineError(f"{path}: header must be {','.join(header)}, got {','.join(got)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise PipelineError(f"{path}: line {lineno} has {len(row)} fields")
            try:
                out.append((row[0].strip(), float(row[1])))
            except ValueError as exc:
                raise PipelineError(f"{path}: line {lineno}: {exc}") from exc
    return out


def read_recorded_csv(path) -> list[tuple[str, float]]:
    rows = _read_two_column_csv(path, ["region_id", "recorded_kwp"])
    bad = [rid for rid, v in rows if not v >= 0]
    if bad:
        raise PipelineError(f"{path}: negative recorded_kwp for {', '.join(bad)}")
    return rows


def read_region_capacity_csv(path) -> list[tuple[str, float]]:
    return _read_two_column_csv(path, ["region_id", "predicted_kwp"])


def region_capacity_csv(rows: Sequence[tuple[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region_id", "predicted_kwp"])
    for rid, kwp in rows:
        w.writerow([rid, f"{kwp:.6f}"])
    return buf.getvalue()


def recorded_csv(rows: Sequence[tuple[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region_id", "recorded_kwp"])
    for rid, kwp in rows:
        w.writerow([rid, f"{kwp:.6f}"])
    return buf.getvalue()
