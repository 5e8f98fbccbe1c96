"""``pvparam`` command line: one subcommand per pipeline stage plus ``run`` and ``demo``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .metrics import band_metric_rows, band_width_metrics, baseline_error_metrics, baseline_metric_rows, metrics_csv
from .pipeline import PipelineError, atomic_write_text, read_recorded_csv, read_regions_geojson
from .profile import read_power_csv
from .runner import (
    PipelineConfig,
    StageError,
    config_from_mapping,
    execute,
    load_config,
    stage_capacity,
    stage_layout,
    stage_orient,
    stage_profile,
    stage_validate,
    stage_vectorize,
)

log = logging.getLogger("pvparam")


def _config(args, **overrides) -> PipelineConfig:
    values = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "config", None):
        return load_config(args.config, values)
    return config_from_mapping(values)


def _path(p) -> Path | None:
    return Path(p) if p else None


def _existing(stage: str, p, what: str) -> Path:
    path = _path(p)
    if path is None or not path.is_file():
        raise StageError(stage, f"{what} file not found: {p}")
    return path


def cmd_vectorize(args) -> None:
    cfg = _config(args, crs=args.crs)
    stage_vectorize(cfg, _existing("vectorize", args.mask, "mask image"), _existing("vectorize", args.worldfile, "world file"), Path(args.out))


def cmd_orient(args) -> None:
    cfg = _config(args, seed=args.seed, crs=args.crs)
    stage_orient(cfg, _existing("orient", args.footprints, "footprints"), _existing("orient", args.pointcloud, "point cloud"), Path(args.out))


def cmd_layout(args) -> None:
    cfg = _config(args, templates=args.templates, grid_alignment=args.grid_alignment)
    out = Path(args.out)
    modules = Path(args.modules_out) if args.modules_out else out.with_name(out.stem + "_modules.geojson")
    stage_layout(cfg, _existing("layout", args.footprints, "footprints"), _existing("layout", args.orientations, "orientations"), out, modules)


def cmd_capacity(args) -> None:
    cfg = _config(args, max_system_kwp=args.max_system_kwp)
    regions = _existing("capacity", args.regions, "regions") if args.regions else None
    out = Path(args.out)
    region_out = Path(args.region_out) if args.region_out else out.with_name("region_capacity.csv")
    stage_capacity(
        cfg,
        _existing("capacity", args.footprints, "footprints"),
        _existing("capacity", args.orientations, "orientations"),
        _existing("capacity", args.layouts, "layouts"),
        regions,
        out,
        region_out,
    )


def cmd_validate(args) -> None:
    cfg = _config(args, margin_pct=args.margin_pct)
    if args.recorded:
        recorded = read_recorded_csv(_existing("validate", args.recorded, "recorded-capacity CSV"))
    elif args.regions:
        regions = read_regions_geojson(_existing("validate", args.regions, "regions"))
        recorded = [(r.region_id, r.recorded_kwp) for r in regions if r.recorded_kwp is not None]
    else:
        raise StageError("validate", "give --recorded or --regions with recorded_kwp properties")
    out = Path(args.out)
    csv_out = Path(args.csv_out) if args.csv_out else out.with_suffix(".csv")
    stage_validate(cfg, _existing("validate", args.predicted, "predicted capacity CSV"), recorded, out, csv_out)


def cmd_profile(args) -> None:
    cfg = _config(args, lat=args.lat, lon=args.lon, shading_derate=args.shading_derate)
    out = Path(args.out)
    outs = {k: out / f"profile_{k}.csv" for k in ("upper", "lower", "baseline1", "baseline2")}
    outs["band_metrics"] = out / "band_metrics.csv"
    lower = _existing("profile", args.lower, "lower-bound power CSV") if args.lower else None
    stage_profile(cfg, _existing("profile", args.pv_layer, "PV layer"), _existing("profile", args.weather, "weather CSV"), lower, outs)


def cmd_band_metrics(args) -> None:
    cfg = _config(args, eps_power=args.eps_power)
    upper = read_power_csv(_existing("band-metrics", args.upper, "upper series"), "upper")
    lower = read_power_csv(_existing("band-metrics", args.lower, "lower series"), "lower")
    rows = band_metric_rows(band_width_metrics(upper, lower, cfg.eps_power))
    for i, path in enumerate(args.baseline or [], start=1):
        base = read_power_csv(_existing("band-metrics", path, "baseline series"))
        rows += baseline_metric_rows(baseline_error_metrics(base, upper, lower, cfg.eps_power), f"baseline{i}_")
    atomic_write_text(args.out, metrics_csv(rows))


def cmd_run(args) -> None:
    cfg = load_config(args.config, {"seed": args.seed, "out": args.out, "margin_pct": args.margin_pct, "max_system_kwp": args.max_system_kwp})
    result = execute(cfg)
    if result.skipped:
        log.info("skipped (unchanged): %s", ", ".join(result.skipped))


def cmd_demo(args) -> None:
    from .demo import write_demo_scene

    cfg_path = write_demo_scene(args.out, seed=args.seed if args.seed is not None else 0)
    print(cfg_path)
    if args.run:
        execute(load_config(cfg_path))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pvparam", description="Rooftop PV parameterization pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="flat key = value file with tunables")
        sp.set_defaults(func=fn)
        return sp

    sp = add("vectorize", cmd_vectorize, "binary mask + world file -> footprint GeoJSON")
    sp.add_argument("--mask", required=True)
    sp.add_argument("--worldfile", required=True)
    sp.add_argument("--crs")
    sp.add_argument("--out", required=True)

    sp = add("orient", cmd_orient, "footprints + point cloud -> orientations CSV")
    sp.add_argument("--footprints", required=True)
    sp.add_argument("--pointcloud", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--crs")
    sp.add_argument("--out", required=True)

    sp = add("layout", cmd_layout, "footprints + orientations -> module layouts")
    sp.add_argument("--footprints", required=True)
    sp.add_argument("--orientations", required=True)
    sp.add_argument("--templates", help="template CSV overriding the built-in table")
    sp.add_argument("--grid-alignment", choices=["mbr_short", "downslope"])
    sp.add_argument("--out", required=True)
    sp.add_argument("--modules-out")

    sp = add("capacity", cmd_capacity, "assemble the PV layer and per-region capacity")
    sp.add_argument("--footprints", required=True)
    sp.add_argument("--orientations", required=True)
    sp.add_argument("--layouts", required=True)
    sp.add_argument("--regions")
    sp.add_argument("--max-system-kwp", type=float)
    sp.add_argument("--out", required=True, help="PV layer GeoJSON")
    sp.add_argument("--region-out")

    sp = add("validate", cmd_validate, "compare predicted and recorded per-region kWp")
    sp.add_argument("--predicted", required=True)
    sp.add_argument("--recorded")
    sp.add_argument("--regions")
    sp.add_argument("--margin-pct", type=float)
    sp.add_argument("--out", required=True, help="report text")
    sp.add_argument("--csv-out")

    sp = add("profile", cmd_profile, "hourly upper-bound, baseline and band series")
    sp.add_argument("--pv-layer", required=True)
    sp.add_argument("--weather", required=True)
    sp.add_argument("--lower", help="externally simulated lower-bound power CSV")
    sp.add_argument("--lat", type=float)
    sp.add_argument("--lon", type=float)
    sp.add_argument("--shading-derate", type=float)
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("band-metrics", cmd_band_metrics, "band width and baseline error metrics from power CSVs")
    sp.add_argument("--upper", required=True)
    sp.add_argument("--lower", required=True)
    sp.add_argument("--baseline", action="append")
    sp.add_argument("--eps-power", type=float)
    sp.add_argument("--out", required=True)

    sp = add("run", cmd_run, "run every configured stage")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.add_argument("--margin-pct", type=float)
    sp.add_argument("--max-system-kwp", type=float)

    sp = add("demo", cmd_demo, "write the bundled synthetic scene and its config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--run", action="store_true", help="also run the pipeline on it")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "run" and not args.config:
        parser.error("run needs --config")
    try:
        args.func(args)
    except StageError as exc:
        print(f"pvparam: error {exc}", file=sys.stderr)
        return 1
    except (PipelineError, ValueError, OSError) as exc:
        stage = args.command
        print(f"pvparam: error [{stage}] {exc}", file=sys.stderr)
        return 1 if stage != "run" else 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
