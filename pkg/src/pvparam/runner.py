"""Staged pipeline runs driven by a flat ``key = value`` config file.

Stages hand off through files in the output directory, so a skipped stage
and a recomputed one feed identical bytes downstream. A stage is skipped
when the hash of its parameters and input files matches the last run and
its outputs are still on disk unchanged.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .layout import (
    LayoutParams,
    ModuleLayout,
    builtin_module_templates,
    infer_best_layout,
    read_templates_csv,
)
from .metrics import (
    band_metric_rows,
    band_width_metrics,
    baseline_error_metrics,
    baseline_metric_rows,
    capacity_validation_report,
    metrics_csv,
)
from .orientation import FitParams, OrientationEstimate, estimate_orientation, read_orientations_csv, read_pointcloud_csv
from .pipeline import (
    UNASSIGNED,
    PipelineError,
    PVSystemRecord,
    aggregate_by_neighborhood,
    atomic_write_text,
    footprints_geojson,
    import_pv_layer,
    modules_geojson,
    pv_layer_geojson,
    read_footprints,
    read_recorded_csv,
    read_region_capacity_csv,
    read_regions_geojson,
    region_capacity_csv,
)
from .profile import (
    ModelParams,
    aggregate_profiles,
    assemble_gpb,
    baseline_scenario_profile,
    power_csv_text,
    read_power_csv,
    read_weather_csv,
    simulate_lower_bound_stub,
    simulate_profiles,
)
from .vectorize import SNAP_GRID_PX, RefineParams, load_georeferenced_mask, vectorize_mask

log = logging.getLogger("pvparam")

STATE_FILE = ".pvparam_state.json"
MANIFEST = "manifest.txt"


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    # inputs and outputs
    mask: str = ""
    worldfile: str = ""
    pointcloud: str = ""
    regions: str = ""
    recorded: str = ""
    weather: str = ""
    lower: str = ""
    templates: str = ""
    out: str = "out"
    crs: str = ""
    seed: int = 0
    # mask reading and refinement
    threshold: int = 128
    connectivity: int = 8
    max_depth: int = 4
    stop_ratio: float = 0.02
    min_mismatch_px: int = 4
    min_component_px: int = 4
    min_area_m2: float = 1.2
    min_extent_m: float = 0.05
    min_fill_ratio: float = 0.5
    # plane fitting
    min_points: int = 10
    iterations: int = 200
    inlier_dist_m: float = 0.10
    flat_threshold_deg: float = 5.0
    # layout
    coverage_tau: float = 0.5
    gap_m: float = 0.0
    grid_alignment: str = "mbr_short"
    anchor_sweep: int = 1
    hd_step_m: float = 0.05
    hd_normalize: bool = False
    # capacity and validation
    margin_pct: float = 25.0
    max_system_kwp: float = math.inf
    eps_power: float = 1.0
    # profiles
    lat: float = 51.44
    lon: float = 5.47
    derate: float = 0.85
    gamma_t_per_c: float = -0.004
    noct_coeff: float = 0.025
    albedo: float = 0.2
    shading_derate: float = 1.0
    n_jobs: int = 1

    PATH_KEYS = ("mask", "worldfile", "pointcloud", "regions", "recorded", "weather", "lower", "templates", "out")

    def refine_params(self) -> RefineParams:
        return RefineParams(
            max_depth=self.max_depth,
            stop_ratio=self.stop_ratio,
            min_mismatch_px=self.min_mismatch_px,
            min_component_px=self.min_component_px,
            min_area_m2=self.min_area_m2,
            min_extent_m=self.min_extent_m,
            connectivity=self.connectivity,
            min_fill_ratio=self.min_fill_ratio,
        )

    def fit_params(self) -> FitParams:
        return FitParams(self.min_points, self.iterations, self.inlier_dist_m, self.flat_threshold_deg)

    def layout_params(self) -> LayoutParams:
        return LayoutParams(self.coverage_tau, self.gap_m, self.grid_alignment, self.anchor_sweep, self.hd_step_m, self.hd_normalize)

    def model_params(self) -> ModelParams:
        return ModelParams(self.derate, self.gamma_t_per_c, self.noct_coeff, self.albedo, self.shading_derate)

    def path(self, key: str) -> Path | None:
        value = getattr(self, key)
        return Path(value) if value else None


def _coerce(name: str, default, text: str):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise PipelineError(f"config key {name}: expected a boolean, got {text!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            if name == "max_system_kwp" and text.lower() in ("", "none"):
                return math.inf
            return float(text)
    except ValueError as exc:
        raise PipelineError(f"config key {name}: {exc}") from exc
    return text


def config_from_mapping(values: dict, base_dir: Path | None = None, start: PipelineConfig | None = None) -> PipelineConfig:
    cfg = start or PipelineConfig()
    known = {f.name: f for f in fields(PipelineConfig)}
    for raw_key, raw in values.items():
        key = raw_key.strip().replace("-", "_")
        if key not in known:
            raise PipelineError(f"unknown config key {raw_key!r}")
        value = _coerce(key, getattr(PipelineConfig(), key), str(raw)) if isinstance(raw, str) else raw
        if key in PipelineConfig.PATH_KEYS and value and base_dir is not None and not Path(value).is_absolute():
            value = str(base_dir / value)
        setattr(cfg, key, value)
    if cfg.grid_alignment not in ("mbr_short", "downslope"):
        raise PipelineError(f"grid_alignment must be mbr_short or downslope, got {cfg.grid_alignment!r}")
    return cfg


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PipelineError(f"config line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PipelineError(f"cannot read config {path}: {exc}") from exc
    cfg = config_from_mapping(parse_config_text(text), path.parent)
    if overrides:
        cfg = config_from_mapping({k: v for k, v in overrides.items() if v is not None}, None, cfg)
    return cfg


def config_parameters(cfg: PipelineConfig) -> list[tuple[str, str]]:
    """Every tunable with its effective value, paths reduced to file names."""
    out = []
    for f in fields(PipelineConfig):
        v = getattr(cfg, f.name)
        if f.name in PipelineConfig.PATH_KEYS:
            v = Path(v).name if v else ""
        out.append((f.name, _fmt_value(v)))
    out.append(("snap_grid_px", _fmt_value(SNAP_GRID_PX)))
    return out


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# Hashing and stage cache
# ---------------------------------------------------------------------------


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(stage: str, path: Path | None, what: str) -> Path:
    if path is None:
        raise StageError(stage, f"no {what} configured")
    if not path.is_file():
        raise StageError(stage, f"{what} file not found: {path}")
    return path


class _StageCache:
    def __init__(self, out_dir: Path):
        self.path = out_dir / STATE_FILE
        try:
            self.state = json.loads(self.path.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            self.state = {}

    @staticmethod
    def key(stage: str, params: dict, inputs: list[Path]) -> str:
        blob = json.dumps({"stage": stage, "params": params, "inputs": [[p.name, file_sha256(p)] for p in inputs], "version": __version__}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def fresh(self, stage: str, key: str, outputs: list[Path]) -> bool:
        entry = self.state.get(stage)
        if not entry or entry.get("key") != key:
            return False
        recorded = entry.get("outputs", {})
        return all(p.is_file() and recorded.get(p.name) == file_sha256(p) for p in outputs)

    def record(self, stage: str, key: str, outputs: list[Path]) -> None:
        self.state[stage] = {"key": key, "outputs": {p.name: file_sha256(p) for p in outputs}}
        atomic_write_text(self.path, json.dumps(self.state, indent=1, sort_keys=True) + "\n")


@dataclass
class RunResult:
    status: int
    ran: list[str]
    skipped: list[str]
    outputs: list[Path]
    message: str = ""


# ---------------------------------------------------------------------------
# Stage bodies (file in, file out)
# ---------------------------------------------------------------------------


def _templates(cfg: PipelineConfig):
    return read_templates_csv(cfg.templates) if cfg.templates else builtin_module_templates()


def _map(fn: Callable, items: list, n_jobs: int) -> list:
    if n_jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def stage_vectorize(cfg: PipelineConfig, mask: Path, worldfile: Path, out: Path) -> None:
    gm = load_georeferenced_mask(mask, worldfile, cfg.threshold, cfg.crs)
    polys = vectorize_mask(gm, cfg.refine_params())
    atomic_write_text(out, footprints_geojson(polys))


def stage_orient(cfg: PipelineConfig, footprints: Path, pointcloud: Path, out: Path) -> None:
    polys = read_footprints(footprints)
    cloud = read_pointcloud_csv(pointcloud, cfg.crs)
    params = cfg.fit_params()

    def one(item):
        i, fp = item
        plane, est, n = estimate_orientation(cloud, fp, params, seed=[cfg.seed, i])
        return fp.id, est, plane, n

    rows = _map(one, list(enumerate(polys)), cfg.n_jobs)
    buf = io.StringIO()
    buf.write("id,tilt_deg,azimuth_deg,confidence,inlier_count,rms_residual_m,n_points,method\n")
    for pid, est, plane, npts in rows:
        inl = plane.inlier_count if plane else 0
        rms = plane.rms_residual_m if plane else 0.0
        method = plane.method if plane else "none"
        buf.write(f"{pid},{est.tilt_deg:.6f},{est.azimuth_deg:.6f},{est.confidence},{inl},{rms:.6f},{npts},{method}\n")
    atomic_write_text(out, buf.getvalue())


LAYOUT_HEADER = ["id", "template_index", "template_label", "orientation", "module_count", "capacity_w", "score", "iou", "hd_m", "n_candidates"]


def stage_layout(cfg: PipelineConfig, footprints: Path, orientations: Path, out_csv: Path, out_modules: Path) -> None:
    polys = read_footprints(footprints)
    ori = read_orientations_csv(orientations)
    templates = _templates(cfg)
    labels = {t.index: t.label for t in templates}
    params = cfg.layout_params()

    def one(fp):
        est = ori.get(fp.id)
        if est is None:
            raise PipelineError(f"no orientation for footprint {fp.id}")
        tilt = min(est.tilt_deg, 89.0)
        bearing = est.azimuth_deg if est.confidence == "ok" else None
        return infer_best_layout(fp.to_shapely(), tilt, templates, params, downslope_bearing_deg=bearing)

    layouts = _map(one, polys, cfg.n_jobs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LAYOUT_HEADER)
    for fp, lay in zip(polys, layouts):
        hd = lay.hd_m if math.isfinite(lay.hd_m) else -1.0
        w.writerow([fp.id, lay.template_index, labels[lay.template_index], lay.orientation, lay.module_count,
                    f"{lay.capacity_w:.6f}", f"{lay.score:.6f}", f"{lay.iou:.6f}", f"{hd:.6f}", lay.n_candidates])
    atomic_write_text(out_csv, buf.getvalue())
    crs = next((p.crs_id for p in polys if p.crs_id), "")
    atomic_write_text(out_modules, modules_geojson([(fp.id, lay) for fp, lay in zip(polys, layouts)], crs))


def read_layouts_csv(path) -> dict[str, tuple[str, ModuleLayout]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != LAYOUT_HEADER:
            raise PipelineError(f"{path}: unexpected layout header")
        out = {}
        for r in reader:
            hd = float(r["hd_m"])
            lay = ModuleLayout(
                template_index=int(r["template_index"]),
                orientation=r["orientation"],
                accepted_cells=[],
                module_count=int(r["module_count"]),
                layout_polygon=None,
                score=float(r["score"]),
                capacity_w=float(r["capacity_w"]),
                iou=float(r["iou"]),
                hd_m=math.inf if hd < 0 else hd,
                n_candidates=int(r["n_candidates"]),
            )
            out[r["id"]] = (r["template_label"], lay)
    return out


def stage_capacity(cfg: PipelineConfig, footprints: Path, orientations: Path, layouts: Path, regions: Path | None, out_layer: Path, out_regions: Path) -> None:
    polys = read_footprints(footprints)
    ori = read_orientations_csv(orientations)
    lay = read_layouts_csv(layouts)
    prov = {"footprints": footprints.name, "orientations": orientations.name, "layouts": layouts.name}
    systems = []
    for fp in polys:
        label, layout = lay[fp.id]
        systems.append(PVSystemRecord(fp.id, fp, ori[fp.id], layout, layout.capacity_w, label, prov))
    atomic_write_text(out_layer, pv_layer_geojson(systems))
    counted = [s for s in systems if s.capacity_w / 1000.0 <= cfg.max_system_kwp]
    if len(counted) < len(systems):
        log.info("capacity: %d systems above max_system_kwp=%g left out of aggregation", len(systems) - len(counted), cfg.max_system_kwp)
    region_list = read_regions_geojson(regions) if regions else []
    rows = aggregate_by_neighborhood(counted, region_list)
    atomic_write_text(out_regions, region_capacity_csv(rows))


def _recorded_pairs(cfg: PipelineConfig, stage: str) -> list[tuple[str, float]]:
    if cfg.recorded:
        return read_recorded_csv(_require(stage, cfg.path("recorded"), "recorded-capacity CSV"))
    regions = read_regions_geojson(_require(stage, cfg.path("regions"), "regions GeoJSON"))
    return [(r.region_id, r.recorded_kwp) for r in regions if r.recorded_kwp is not None]


def stage_validate(cfg: PipelineConfig, predicted: Path, recorded: list[tuple[str, float]], out_txt: Path, out_csv: Path) -> None:
    pred = [(rid, v) for rid, v in read_region_capacity_csv(predicted) if rid != UNASSIGNED]
    report = capacity_validation_report(pred, recorded, cfg.margin_pct)
    atomic_write_text(out_txt, report.to_text())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region_id", "recorded_kwp", "predicted_kwp", "ape_pct"])
    for rid, r, p, ape in report.per_region:
        w.writerow([rid, f"{r:.6f}", f"{p:.6f}", "" if math.isnan(ape) else f"{ape:.6f}"])
    atomic_write_text(out_csv, report.to_csv() + "\n" + buf.getvalue())


def stage_profile(cfg: PipelineConfig, layer: Path, weather_path: Path, lower_path: Path | None, outs: dict[str, Path]) -> None:
    systems = import_pv_layer(layer)
    weather = read_weather_csv(weather_path)
    site = (cfg.lat, cfg.lon)
    params = cfg.model_params()
    per_system = simulate_profiles(systems, weather, site, params, cfg.n_jobs)
    upper = aggregate_profiles(per_system, label="upper")
    if lower_path is not None:
        lower = read_power_csv(lower_path, label="lower")
    else:
        lower = simulate_lower_bound_stub(upper, params)
    band = assemble_gpb(upper, lower)
    if band.clamp_applied:
        log.warning("profile: lower bound exceeded upper bound somewhere; clamped")
    b1 = baseline_scenario_profile(systems, weather, site, "baseline1", params, cfg.n_jobs)
    b2 = baseline_scenario_profile(systems, weather, site, "baseline2", params, cfg.n_jobs)
    atomic_write_text(outs["upper"], power_csv_text(band.upper))
    atomic_write_text(outs["lower"], power_csv_text(band.lower))
    atomic_write_text(outs["baseline1"], power_csv_text(b1))
    atomic_write_text(outs["baseline2"], power_csv_text(b2))
    rows = band_metric_rows(band_width_metrics(band.upper, band.lower, cfg.eps_power))
    rows += baseline_metric_rows(baseline_error_metrics(b1, band.upper, band.lower, cfg.eps_power), "baseline1_")
    rows += baseline_metric_rows(baseline_error_metrics(b2, band.upper, band.lower, cfg.eps_power), "baseline2_")
    rows.append(("clamp_applied", int(band.clamp_applied), "flag"))
    atomic_write_text(outs["band_metrics"], metrics_csv(rows))


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def _versions() -> list[tuple[str, str]]:
    import PIL
    import scipy
    import shapely

    return [
        ("pvparam", __version__),
        ("python", platform.python_version()),
        ("numpy", np.__version__),
        ("scipy", scipy.__version__),
        ("shapely", shapely.__version__),
        ("pillow", PIL.__version__),
    ]


def manifest_text(cfg: PipelineConfig, inputs: list[Path], outputs: list[Path]) -> str:
    lines = ["# pvparam run manifest", "", "[versions]"]
    lines += [f"{k} = {v}" for k, v in _versions()]
    lines += ["", "[parameters]"]
    lines += [f"{k} = {v}" for k, v in config_parameters(cfg)]
    lines += ["", "[templates]", "index,label,height_mm,width_mm,cell_count,material,rated_power_w"]
    lines += [f"{t.index},{t.label},{t.height_mm:g},{t.width_mm:g},{t.cell_count},{t.material},{t.rated_power_w!r}" for t in _templates(cfg)]
    lines += ["", "[inputs]"]
    lines += [f"{p.name} = sha256:{file_sha256(p)}" for p in inputs]
    lines += ["", "[outputs]"]
    lines += [f"{p.name} = sha256:{file_sha256(p)}" for p in outputs]
    return "\n".join(lines) + "\n"


def execute(cfg: PipelineConfig) -> RunResult:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cache = _StageCache(out)
    ran, skipped, inputs, outputs = [], [], [], []

    def stage(name: str, ins: list[Path], outs: list[Path], params: dict, body: Callable[[], None]) -> None:
        key = cache.key(name, params, ins)
        if cache.fresh(name, key, outs):
            log.info("%s: inputs unchanged, skipped", name)
            skipped.append(name)
        else:
            try:
                body()
            except StageError:
                raise
            except Exception as exc:  # tag any failure with its stage
                raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
            cache.record(name, key, outs)
            log.info("%s: done", name)
            ran.append(name)
        outputs.extend(outs)
        for p in ins:
            if p.parent.resolve() != out.resolve() and p not in inputs:
                inputs.append(p)

    p = {k: getattr(cfg, k) for k in ("threshold", "crs")}
    p.update(asdict(cfg.refine_params()))
    mask = _require("vectorize", cfg.path("mask"), "mask image")
    world = _require("vectorize", cfg.path("worldfile"), "world file")
    fps = out / "footprints.geojson"
    stage("vectorize", [mask, world], [fps], p, lambda: stage_vectorize(cfg, mask, world, fps))

    cloud = _require("orient", cfg.path("pointcloud"), "point cloud")
    ori = out / "orientations.csv"
    p = dict(asdict(cfg.fit_params()), seed=cfg.seed, crs=cfg.crs)
    stage("orient", [fps, cloud], [ori], p, lambda: stage_orient(cfg, fps, cloud, ori))

    tmpl = [_require("layout", cfg.path("templates"), "template CSV")] if cfg.templates else []
    lay, mods = out / "layouts.csv", out / "modules.geojson"
    stage("layout", [fps, ori, *tmpl], [lay, mods], asdict(cfg.layout_params()), lambda: stage_layout(cfg, fps, ori, lay, mods))

    regions = _require("capacity", cfg.path("regions"), "regions GeoJSON") if cfg.regions else None
    layer, reg_csv = out / "pv_layer.geojson", out / "region_capacity.csv"
    p = {"max_system_kwp": _fmt_value(cfg.max_system_kwp)}
    stage("capacity", [fps, ori, lay, *([regions] if regions else [])], [layer, reg_csv], p,
          lambda: stage_capacity(cfg, fps, ori, lay, regions, layer, reg_csv))

    if cfg.recorded or (regions and any(r.recorded_kwp is not None for r in read_regions_geojson(regions))):
        recorded = _recorded_pairs(cfg, "validate")
        rec_in = [cfg.path("recorded")] if cfg.recorded else [regions]
        txt, vcsv = out / "validation.txt", out / "validation.csv"
        stage("validate", [reg_csv, *rec_in], [txt, vcsv], {"margin_pct": cfg.margin_pct},
              lambda: stage_validate(cfg, reg_csv, recorded, txt, vcsv))

    if cfg.weather:
        weather = _require("profile", cfg.path("weather"), "weather CSV")
        lower = _require("profile", cfg.path("lower"), "lower-bound power CSV") if cfg.lower else None
        outs = {k: out / f"profile_{k}.csv" for k in ("upper", "lower", "baseline1", "baseline2")}
        outs["band_metrics"] = out / "band_metrics.csv"
        p = dict(asdict(cfg.model_params()), lat=cfg.lat, lon=cfg.lon, eps_power=cfg.eps_power)
        stage("profile", [layer, weather, *([lower] if lower else [])], list(outs.values()), p,
              lambda: stage_profile(cfg, layer, weather, lower, outs))

    atomic_write_text(out / MANIFEST, manifest_text(cfg, inputs, outputs))
    return RunResult(0, ran, skipped, outputs + [out / MANIFEST])


def run_pipeline(config_path, overrides: dict | None = None) -> int:
    """Run every configured stage; returns a process exit status."""
    try:
        cfg = load_config(config_path, overrides)
    except PipelineError as exc:
        log.error("[config] %s", exc)
        return 2
    try:
        execute(cfg)
    except StageError as exc:
        log.error("%s", exc)
        return 1
    return 0
