"""Synthetic scenes for demos and tests: masks, point clouds, weather."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import shapely
from shapely import affinity
from shapely.geometry import Polygon, box


@dataclass
class MaskScene:
    name: str
    shapes: list[Polygon]  # pixel coordinates (col, row)
    clean: np.ndarray
    noisy: np.ndarray


def rasterize_pixel_centres(geoms, shape: tuple[int, int]) -> np.ndarray:
    rr, cc = np.mgrid[0 : shape[0], 0 : shape[1]]
    out = np.zeros(shape, dtype=bool)
    for g in geoms:
        out |= shapely.contains_xy(g, cc.astype(float), rr.astype(float))
    return out


def salt_and_pepper(bits: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    return bits ^ (rng.random(bits.shape) < rate)


def _l_shape(x, y, w, h, arm):
    return shapely.union_all([box(x, y, x + w, y + arm), box(x, y, x + arm, y + h)])


def _t_shape(x, y, w, h, arm):
    cx = x + w / 2
    return shapely.union_all([box(x, y, x + w, y + arm), box(cx - arm / 2, y, cx + arm / 2, y + h)])


def _u_shape(x, y, w, h, arm):
    return shapely.union_all([box(x, y, x + w, y + arm), box(x, y, x + arm, y + h), box(x + w - arm, y, x + w, y + h)])


def _holed(x, y, w, h, hole):
    outer = box(x, y, x + w, y + h)
    cx, cy = x + w / 2, y + h / 2
    return outer.difference(box(cx - hole[0] / 2, cy - hole[1] / 2, cx + hole[0] / 2, cy + hole[1] / 2))


def mask_scene_suite(size: int = 200, seed: int = 0) -> list[MaskScene]:
    """Twenty scenes: rectangles, L/T/U shapes, holed and rotated shapes, 1-2% noise."""
    rng = np.random.default_rng(seed)
    specs = [
        ("rect", [box(40, 50, 150, 110)]),
        ("rect_pair", [box(20, 20, 90, 70), box(110, 100, 180, 180)]),
        ("rect_thin", [box(30, 80, 170, 120)]),
        ("rect_rot15", [affinity.rotate(box(40, 60, 160, 130), 15)]),
        ("rect_rot37", [affinity.rotate(box(50, 50, 150, 140), 37)]),
        ("rect_rot60", [affinity.rotate(box(30, 70, 170, 125), 60)]),
        ("l_shape", [_l_shape(30, 30, 140, 140, 45)]),
        ("l_shape_wide", [_l_shape(20, 40, 160, 120, 60)]),
        ("l_rot20", [affinity.rotate(_l_shape(40, 40, 120, 120, 45), 20)]),
        ("t_shape", [_t_shape(20, 30, 160, 140, 50)]),
        ("t_rot30", [affinity.rotate(_t_shape(30, 40, 140, 120, 50), 30)]),
        ("u_shape", [_u_shape(20, 30, 160, 140, 45)]),
        ("u_rot10", [affinity.rotate(_u_shape(30, 30, 140, 130, 45), 10)]),
        ("holed", [_holed(30, 30, 140, 140, (50, 40))]),
        ("holed_offcentre", [_holed(20, 40, 160, 120, (60, 30))]),
        ("holed_rot25", [affinity.rotate(_holed(40, 40, 120, 120, (40, 40)), 25)]),
        ("l_and_rect", [_l_shape(15, 15, 100, 100, 40), box(130, 120, 185, 185)]),
        ("rot_pair", [affinity.rotate(box(20, 30, 100, 80), 30), affinity.rotate(box(110, 120, 180, 175), -20)]),
        ("t_shape_flat", [_t_shape(20, 50, 160, 110, 45)]),
        ("u_rot45", [affinity.rotate(_u_shape(40, 40, 120, 120, 40), 45)]),
    ]
    scenes = []
    for i, (name, shapes) in enumerate(specs):
        clean = rasterize_pixel_centres(shapes, (size, size))
        rate = 0.01 if i % 2 == 0 else 0.02
        scenes.append(MaskScene(name, shapes, clean, salt_and_pepper(clean, rate, rng)))
    return scenes


def plane_points(
    n: int,
    tilt_deg: float,
    azimuth_deg: float,
    rng: np.random.Generator,
    extent: tuple[float, float] = (10.0, 6.0),
    noise_sigma: float = 0.0,
    outlier_fraction: float = 0.0,
    outlier_range: float = 2.0,
    origin: tuple[float, float, float] = (0.0, 0.0, 10.0),
) -> np.ndarray:
    """Points on a roof plane with the given tilt and compass azimuth (facing direction)."""
    x = rng.uniform(-extent[0] / 2, extent[0] / 2, n)
    y = rng.uniform(-extent[1] / 2, extent[1] / 2, n)
    t, a = math.radians(tilt_deg), math.radians(azimuth_deg)
    # surface faces (sin a, cos a) in (east, north); height drops along that direction
    z = -math.tan(t) * (x * math.sin(a) + y * math.cos(a))
    z = z + rng.normal(0.0, noise_sigma, n) if noise_sigma > 0 else z
    n_out = int(round(outlier_fraction * n))
    if n_out:
        idx = rng.choice(n, n_out, replace=False)
        z[idx] = z[idx] + rng.uniform(-outlier_range, outlier_range, n_out)
    return np.column_stack((x + origin[0], y + origin[1], z + origin[2]))


def clear_sky_weather(timestamps, lat: float, lon: float, temp_c: float = 15.0, wind: float = 2.0):
    """Simple clear-sky irradiance: Meinel beam attenuation plus a fixed diffuse fraction."""
    from .profile import WeatherSeries, solar_position

    zen, _ = solar_position(timestamps, lat, lon)
    cosz = np.cos(np.radians(zen))
    up = cosz > 0.01
    am = np.where(up, 1.0 / np.maximum(cosz, 0.01), np.inf)
    dni = np.where(up, 1353.0 * 0.7 ** (am**0.678), 0.0)
    dhi = np.where(up, 0.1 * dni, 0.0)
    ghi = dni * np.clip(cosz, 0, None) + dhi
    n = len(dni)
    return WeatherSeries(
        np.asarray(timestamps, dtype="datetime64[s]"), ghi, dni, dhi, np.full(n, temp_c), np.full(n, wind)
    )


def hourly_timestamps(start: str, hours: int) -> np.ndarray:
    return np.datetime64(start, "s") + np.arange(hours) * np.timedelta64(3600, "s")
