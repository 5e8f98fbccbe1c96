"""A small bundled scene (mask, world file, point cloud, regions, weather) for demos and smoke runs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from shapely import affinity
from shapely.geometry import box

from .geometry import Affine, ArrayPolygon
from .layout import builtin_module_templates, plan_cell_dimensions
from .orientation import PointSet, write_pointcloud_csv
from .pipeline import NeighborhoodRecord, atomic_write_text, recorded_csv, regions_geojson
from .profile import write_weather_csv
from .synthetic import clear_sky_weather, hourly_timestamps, rasterize_pixel_centres, salt_and_pepper
from .vectorize import write_mask_pgm, write_worldfile

GSD_M = 0.05
WIDTH_PX, HEIGHT_PX = 720, 520
ORIGIN = (155000.0, 383026.0)  # map coordinates of the image's top-left corner
CRS = "EPSG:28992"


@dataclass(frozen=True)
class DemoArray:
    template: int
    orientation: str
    cols: int  # modules across the slope
    rows: int  # modules up the slope
    tilt_deg: float
    azimuth_deg: float
    centre: tuple[float, float]  # metres from ORIGIN, east / south
    roof_z: float = 8.0


DEMO_ARRAYS = (
    DemoArray(11, "portrait", 3, 2, 35.0, 180.0, (5.0, 6.0)),
    DemoArray(8, "portrait", 4, 1, 20.0, 90.0, (15.0, 5.5)),
    DemoArray(8, "portrait", 4, 1, 20.0, 270.0, (15.0, 11.5)),
    DemoArray(20, "landscape", 2, 3, 30.0, 225.0, (27.5, 7.5)),
    DemoArray(11, "landscape", 2, 2, 0.0, 180.0, (7.0, 18.5)),
    DemoArray(13, "portrait", 2, 2, 25.0, 150.0, (19.0, 19.0)),
    DemoArray(21, "portrait", 5, 1, 15.0, 200.0, (30.0, 19.5)),
)

REGION_SPLITS_M = (0.0, 12.0, 24.0, 36.0)


def demo_transform() -> Affine:
    # pixel (0, 0) centre sits half a pixel inside the top-left corner
    return Affine(GSD_M, 0.0, ORIGIN[0] + GSD_M / 2, 0.0, -GSD_M, ORIGIN[1] - GSD_M / 2)


def _array_footprint(a: DemoArray, templates) -> tuple:
    cell = plan_cell_dimensions(templates[a.template], a.orientation, a.tilt_deg)
    across, up = a.cols * cell.along_mbr_long_m, a.rows * cell.along_mbr_short_m
    x = ORIGIN[0] + a.centre[0]
    y = ORIGIN[1] - a.centre[1]
    # across-slope runs east for a south-facing array; rotate with the azimuth
    rect = box(x - across / 2, y - up / 2, x + across / 2, y + up / 2)
    return affinity.rotate(rect, -(a.azimuth_deg - 180.0), origin=(x, y)), (x, y)


def demo_capacity_w(a: DemoArray, templates) -> float:
    return a.cols * a.rows * templates[a.template].rated_power_w


def _plane_points(a: DemoArray, geom, centre, rng, density: float = 12.0) -> np.ndarray:
    minx, miny, maxx, maxy = geom.buffer(0.3).bounds
    n = int(density * (maxx - minx) * (maxy - miny))
    x = rng.uniform(minx, maxx, n)
    y = rng.uniform(miny, maxy, n)
    t, az = math.radians(a.tilt_deg), math.radians(a.azimuth_deg)
    z = a.roof_z - math.tan(t) * ((x - centre[0]) * math.sin(az) + (y - centre[1]) * math.cos(az))
    z = z + rng.normal(0.0, 0.03, n)
    out = rng.random(n) < 0.05
    z[out] += rng.uniform(-1.5, 1.5, out.sum())
    return np.column_stack((x, y, z))


def write_demo_scene(directory, seed: int = 0, noise_rate: float = 0.005) -> Path:
    """Write the scene and a ready-to-run ``config.txt``; returns the config path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    templates = builtin_module_templates()
    tf = demo_transform()
    inv = tf.inverse()

    geoms, pts = [], []
    for a in DEMO_ARRAYS:
        g, c = _array_footprint(a, templates)
        geoms.append(g)
        pts.append(_plane_points(a, g, c, rng))
    # sparse ground returns everywhere
    ng = 2000
    gx = rng.uniform(ORIGIN[0], ORIGIN[0] + WIDTH_PX * GSD_M, ng)
    gy = rng.uniform(ORIGIN[1] - HEIGHT_PX * GSD_M, ORIGIN[1], ng)
    pts.append(np.column_stack((gx, gy, rng.normal(0.0, 0.05, ng))))

    pixel_geoms = [inv.transform_geometry(g) for g in geoms]
    clean = rasterize_pixel_centres(pixel_geoms, (HEIGHT_PX, WIDTH_PX))
    write_mask_pgm(d / "mask.pgm", salt_and_pepper(clean, noise_rate, rng))
    write_worldfile(d / "mask.pgw", tf)
    write_pointcloud_csv(d / "pointcloud.csv", PointSet(np.vstack(pts), CRS))

    regions, recorded = [], []
    y0, y1 = ORIGIN[1] - HEIGHT_PX * GSD_M, ORIGIN[1]
    for k in range(len(REGION_SPLITS_M) - 1):
        x0, x1 = ORIGIN[0] + REGION_SPLITS_M[k], ORIGIN[0] + REGION_SPLITS_M[k + 1]
        rid = f"R{k + 1}"
        truth = sum(
            demo_capacity_w(a, templates) for a, g in zip(DEMO_ARRAYS, geoms) if x0 <= g.centroid.x < x1
        ) / 1000.0
        # recorded values carry a fixed, known bias per region
        rec = round(truth * (1.0 + (0.05, -0.08, 0.12)[k]), 3)
        poly = ArrayPolygon.from_rings([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], id=rid, crs_id=CRS)
        regions.append(NeighborhoodRecord(rid, poly, rec))
        recorded.append((rid, rec))
    atomic_write_text(d / "regions.geojson", regions_geojson(regions))
    atomic_write_text(d / "recorded.csv", recorded_csv(recorded))

    ts = hourly_timestamps("2024-06-10T00:00:00", 24 * 7)
    weather = clear_sky_weather(ts, 51.44, 5.47, temp_c=18.0, wind=2.5)
    write_weather_csv(d / "weather.csv", weather)

    config = "\n".join(
        [
            "# bundled synthetic scene",
            "mask = mask.pgm",
            "worldfile = mask.pgw",
            "pointcloud = pointcloud.csv",
            "regions = regions.geojson",
            "recorded = recorded.csv",
            "weather = weather.csv",
            "out = out",
            f"crs = {CRS}",
            f"seed = {seed}",
            "grid_alignment = downslope",
            "shading_derate = 0.85",
            "lat = 51.44",
            "lon = 5.47",
        ]
    )
    cfg = d / "config.txt"
    atomic_write_text(cfg, config + "\n")
    return cfg
