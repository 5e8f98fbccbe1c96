"""Hourly PV energy series: solar geometry, a plain upper-bound DC model,
orientation-collapsing baselines and generation bands."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Sequence

import numpy as np

from ._validation import check_aligned

HOUR_S = 3600
WEATHER_HEADER = ["timestamp", "ghi", "dni", "dhi", "temp", "wind"]
POWER_HEADER = ["timestamp", "energy_wh"]


class SeriesError(ValueError):
    pass


def _as_utc_seconds(timestamps) -> np.ndarray:
    arr = np.asarray(timestamps)
    if arr.dtype.kind == "M":
        return arr.astype("datetime64[s]")
    return np.array([parse_timestamp(t) for t in np.atleast_1d(arr)], dtype="datetime64[s]")


def parse_timestamp(text) -> np.datetime64:
    """ISO 8601 to UTC seconds; naive times are taken as UTC."""
    if isinstance(text, np.datetime64):
        return text.astype("datetime64[s]")
    s = str(text).strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(dt, "s")


def format_timestamp(ts: np.datetime64) -> str:
    return str(ts.astype("datetime64[s]")) + "Z"


@dataclass(frozen=True)
class WeatherSeries:
    timestamps: np.ndarray
    ghi_w_m2: np.ndarray
    dni_w_m2: np.ndarray
    dhi_w_m2: np.ndarray
    temp_c: np.ndarray | None = None
    wind_m_s: np.ndarray | None = None

    def __post_init__(self):
        ts = _as_utc_seconds(self.timestamps)
        object.__setattr__(self, "timestamps", ts)
        n = len(ts)
        for name in ("ghi_w_m2", "dni_w_m2", "dhi_w_m2", "temp_c", "wind_m_s"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.asarray(val, dtype=float).reshape(-1)
            if len(arr) != n:
                raise SeriesError(f"{name} has {len(arr)} values for {n} timestamps")
            object.__setattr__(self, name, arr)
        for name in ("ghi_w_m2", "dni_w_m2", "dhi_w_m2"):
            arr = getattr(self, name)
            bad = np.flatnonzero(~(arr >= 0))
            if len(bad):
                raise SeriesError(f"{name} must be >= 0; row {int(bad[0])} is {arr[bad[0]]}")
        if n > 1:
            steps = np.diff(ts).astype(np.int64)
            bad = np.flatnonzero(steps <= 0)
            if len(bad):
                raise SeriesError(f"timestamps not strictly increasing at row {int(bad[0]) + 1}")

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class PowerSeries:
    timestamps: np.ndarray
    values_wh: np.ndarray
    label: str = ""

    def __post_init__(self):
        ts = _as_utc_seconds(self.timestamps)
        vals = np.asarray(self.values_wh, dtype=float).reshape(-1)
        if len(vals) != len(ts):
            raise SeriesError(f"{len(vals)} values for {len(ts)} timestamps")
        bad = np.flatnonzero(~(vals >= 0))
        if len(bad):
            raise SeriesError(f"energy must be >= 0; row {int(bad[0])} is {vals[bad[0]]}")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values_wh", vals)

    def __len__(self) -> int:
        return len(self.timestamps)

    def scaled(self, factor: float, label: str | None = None) -> "PowerSeries":
        return PowerSeries(self.timestamps, self.values_wh * factor, self.label if label is None else label)


@dataclass(frozen=True)
class GenerationBand:
    upper: PowerSeries
    lower: PowerSeries
    clamp_applied: bool = False


@dataclass(frozen=True)
class ModelParams:
    derate: float = 0.85
    gamma_t_per_c: float = -0.004
    noct_coeff: float = 0.025  # degC per W/m2
    albedo: float = 0.2
    shading_derate: float = 1.0  # only used by the lower-bound stub


@dataclass(frozen=True)
class ArraySpec:
    """Minimal system description; anything with these attributes works too."""

    tilt_deg: float
    azimuth_deg: float
    capacity_w: float
    id: str = ""


BASELINE_SCENARIOS = {"baseline1": {"tilt_deg": 35.0, "azimuth_deg": 180.0}, "baseline2": {"tilt_deg": 0.0}}


# ---------------------------------------------------------------------------
# Solar geometry
# ---------------------------------------------------------------------------


def _refraction_deg(elev: np.ndarray) -> np.ndarray:
    """Atmospheric refraction correction (NOAA piecewise fit), degrees."""
    e = np.asarray(elev, dtype=float)
    te = np.tan(np.radians(np.where(np.abs(e) < 1e-6, 1e-6, e)))
    arcsec = np.select(
        [e > 85.0, e > 5.0, e > -0.575],
        [
            np.zeros_like(e),
            58.1 / te - 0.07 / te**3 + 0.000086 / te**5,
            1735.0 + e * (-518.2 + e * (103.4 + e * (-12.79 + e * 0.711))),
        ],
        -20.772 / te,
    )
    return arcsec / 3600.0


def solar_position(timestamps, lat_deg: float, lon_deg: float, refraction: bool = True):
    """Apparent zenith and compass azimuth (degrees) of the sun, vectorised over UTC timestamps.

    Low-precision ephemeris: mean longitude and anomaly, equation of centre,
    obliquity and equation of time, then hour angle. Good to about 0.01 deg
    for dates within a few centuries of 2000.
    """
    if not -90.0 <= lat_deg <= 90.0:
        raise ValueError(f"latitude must be in [-90, 90], got {lat_deg}")
    ts = _as_utc_seconds(timestamps)
    secs = ts.astype(np.int64).astype(float)
    jd = secs / 86400.0 + 2440587.5
    jc = (jd - 2451545.0) / 36525.0

    l0 = np.mod(280.46646 + jc * (36000.76983 + jc * 0.0003032), 360.0)
    m = np.radians(357.52911 + jc * (35999.05029 - 0.0001537 * jc))
    ecc = 0.016708634 - jc * (0.000042037 + 0.0000001267 * jc)
    centre = (
        np.sin(m) * (1.914602 - jc * (0.004817 + 0.000014 * jc))
        + np.sin(2 * m) * (0.019993 - 0.000101 * jc)
        + np.sin(3 * m) * 0.000289
    )
    omega = np.radians(125.04 - 1934.136 * jc)
    app_long = np.radians(l0 + centre - 0.00569 - 0.00478 * np.sin(omega))
    mean_obliq = 23.0 + (26.0 + (21.448 - jc * (46.815 + jc * (0.00059 - jc * 0.001813))) / 60.0) / 60.0
    obliq = np.radians(mean_obliq + 0.00256 * np.cos(omega))
    decl = np.arcsin(np.sin(obliq) * np.sin(app_long))

    y = np.tan(obliq / 2.0) ** 2
    l0r = np.radians(l0)
    eot_min = 4.0 * np.degrees(
        y * np.sin(2 * l0r)
        - 2 * ecc * np.sin(m)
        + 4 * ecc * y * np.sin(m) * np.cos(2 * l0r)
        - 0.5 * y * y * np.sin(4 * l0r)
        - 1.25 * ecc * ecc * np.sin(2 * m)
    )
    minutes = np.mod(secs, 86400.0) / 60.0
    true_solar = np.mod(minutes + eot_min + 4.0 * lon_deg, 1440.0)
    ha = np.radians(true_solar / 4.0 - 180.0)

    lat = math.radians(lat_deg)
    cosz = math.sin(lat) * np.sin(decl) + math.cos(lat) * np.cos(decl) * np.cos(ha)
    zen = np.degrees(np.arccos(np.clip(cosz, -1.0, 1.0)))
    az = np.degrees(np.arctan2(np.sin(ha), np.cos(ha) * math.sin(lat) - np.tan(decl) * math.cos(lat))) + 180.0
    az = np.mod(az, 360.0)
    az = np.where(az >= 360.0, 0.0, az)
    if refraction:
        zen = zen - _refraction_deg(90.0 - zen)
    zen = np.clip(zen, 0.0, np.nextafter(180.0, 0.0))
    return zen, az


def cos_angle_of_incidence(tilt_deg, azimuth_deg, sun_zenith_deg, sun_azimuth_deg):
    t, zs = np.radians(tilt_deg), np.radians(sun_zenith_deg)
    dphi = np.radians(np.asarray(sun_azimuth_deg) - np.asarray(azimuth_deg))
    return np.cos(zs) * np.cos(t) + np.sin(zs) * np.sin(t) * np.cos(dphi)


def plane_of_array_irradiance(ghi, dni, dhi, tilt_deg, azimuth_deg, sun_zenith_deg, sun_azimuth_deg, albedo: float = 0.2):
    """Isotropic-sky transposition to the module plane, W/m2. Works on scalars or arrays."""
    cos_aoi = cos_angle_of_incidence(tilt_deg, azimuth_deg, sun_zenith_deg, sun_azimuth_deg)
    ct = np.cos(np.radians(tilt_deg))
    beam = np.asarray(dni, dtype=float) * np.maximum(0.0, cos_aoi)
    sky = np.asarray(dhi, dtype=float) * (1.0 + ct) / 2.0
    ground = np.asarray(ghi, dtype=float) * albedo * (1.0 - ct) / 2.0
    return beam + sky + ground


# ---------------------------------------------------------------------------
# Energy model
# ---------------------------------------------------------------------------


def dc_energy_wh(capacity_w, poa_w_m2, cell_temp_c, params: ModelParams = ModelParams()):
    """One hour of DC energy at constant POA and cell temperature."""
    thermal = np.maximum(0.0, 1.0 + params.gamma_t_per_c * (np.asarray(cell_temp_c, dtype=float) - 25.0))
    return capacity_w * (np.asarray(poa_w_m2, dtype=float) / 1000.0) * params.derate * thermal


def cell_temperature(temp_c, poa_w_m2, params: ModelParams = ModelParams()):
    return np.asarray(temp_c, dtype=float) + np.asarray(poa_w_m2, dtype=float) * params.noct_coeff


def _system_angles(system) -> tuple[float, float, float]:
    ori = getattr(system, "orientation", None)
    tilt = getattr(ori, "tilt_deg", None) if ori is not None else getattr(system, "tilt_deg", None)
    az = getattr(ori, "azimuth_deg", None) if ori is not None else getattr(system, "azimuth_deg", None)
    cap = getattr(system, "capacity_w", None)
    if tilt is None or az is None or cap is None:
        raise SeriesError("system needs tilt_deg, azimuth_deg and capacity_w")
    return float(tilt), float(az), float(cap)


def simulate_upper_bound_profile(system, weather: WeatherSeries, site: tuple[float, float], params: ModelParams = ModelParams(), label: str | None = None, sun=None) -> PowerSeries:
    """Unshaded hourly energy of one system.

    Each timestamp is treated as one hour at that instant's irradiance.
    Without an ambient temperature column the thermal correction is skipped.
    """
    tilt, az, cap = _system_angles(system)
    zen, saz = sun if sun is not None else solar_position(weather.timestamps, *site)
    poa = plane_of_array_irradiance(weather.ghi_w_m2, weather.dni_w_m2, weather.dhi_w_m2, tilt, az, zen, saz, params.albedo)
    poa = np.maximum(poa, 0.0)
    if weather.temp_c is None or not np.isfinite(weather.temp_c).all():
        tcell = np.full(len(poa), 25.0)
        if weather.temp_c is not None:
            ok = np.isfinite(weather.temp_c)
            tcell[ok] = cell_temperature(weather.temp_c[ok], poa[ok], params)
    else:
        tcell = cell_temperature(weather.temp_c, poa, params)
    energy = np.where(poa > 0.0, dc_energy_wh(cap, poa, tcell, params), 0.0)
    name = label if label is not None else str(getattr(system, "id", "") or "upper")
    return PowerSeries(weather.timestamps, energy, name)


def simulate_profiles(systems: Sequence, weather: WeatherSeries, site, params: ModelParams = ModelParams(), n_jobs: int = 1) -> list[PowerSeries]:
    """Per-system profiles in input order; solar geometry is computed once."""
    sun = solar_position(weather.timestamps, *site)
    run = lambda s: simulate_upper_bound_profile(s, weather, site, params, sun=sun)  # noqa: E731
    if n_jobs > 1 and len(systems) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(run, systems))
    return [run(s) for s in systems]


def simulate_lower_bound_stub(upper: PowerSeries, params: ModelParams = ModelParams()) -> PowerSeries:
    """Constant shading derate applied to an upper series; exercises band code only."""
    return upper.scaled(params.shading_derate, label=f"{upper.label}_lower_stub")


def baseline_scenario_profile(systems: Sequence, weather: WeatherSeries, site, scenario: str, params: ModelParams = ModelParams(), n_jobs: int = 1) -> PowerSeries:
    """Summed profile with every system forced onto the scenario's tilt/azimuth."""
    if scenario not in BASELINE_SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {sorted(BASELINE_SCENARIOS)}")
    over = BASELINE_SCENARIOS[scenario]
    forced = []
    for s in systems:
        tilt, az, cap = _system_angles(s)
        forced.append(ArraySpec(over.get("tilt_deg", tilt), over.get("azimuth_deg", az), cap, str(getattr(s, "id", ""))))
    if not forced:
        raise ValueError("no systems given")
    return aggregate_profiles(simulate_profiles(forced, weather, site, params, n_jobs), label=scenario)


def assemble_gpb(upper: PowerSeries, lower: PowerSeries) -> GenerationBand:
    check_aligned(upper.timestamps, lower.timestamps, "upper/lower timestamps")
    over = lower.values_wh > upper.values_wh
    if not over.any():
        return GenerationBand(upper, lower, False)
    clamped = np.where(over, upper.values_wh, lower.values_wh)
    return GenerationBand(upper, replace(lower, values_wh=clamped), True)


def aggregate_profiles(series_list: Sequence[PowerSeries], label: str = "aggregate") -> PowerSeries:
    if not series_list:
        raise ValueError("nothing to aggregate")
    first = series_list[0]
    total = np.zeros(len(first))
    for s in series_list:
        check_aligned(first.timestamps, s.timestamps, f"timestamps of {s.label or 'series'}")
        total = total + s.values_wh
    return PowerSeries(first.timestamps, total, label)


# ---------------------------------------------------------------------------
# CSV IO
# ---------------------------------------------------------------------------


def _check_hourly(ts: np.ndarray, path) -> None:
    if len(ts) > 1:
        steps = np.diff(ts).astype(np.int64)
        bad = np.flatnonzero(steps != HOUR_S)
        if len(bad):
            raise SeriesError(f"{path}: row {int(bad[0]) + 2} is not one hour after the previous row")


def _opt_float(s: str) -> float:
    s = s.strip()
    return float(s) if s else math.nan


def read_weather_csv(path) -> WeatherSeries:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != WEATHER_HEADER:
            raise SeriesError(f"{path}: weather header must be {','.join(WEATHER_HEADER)}, got {','.join(header)}")
        rows = [r for r in reader if r]
    ts = [parse_timestamp(r[0]) for r in rows]
    cols = np.array([[float(r[1]), float(r[2]), float(r[3]), _opt_float(r[4]), _opt_float(r[5])] for r in rows]).reshape(-1, 5)
    temp = None if np.isnan(cols[:, 3]).all() else cols[:, 3]
    wind = None if np.isnan(cols[:, 4]).all() else cols[:, 4]
    ts = np.array(ts, dtype="datetime64[s]")
    _check_hourly(ts, path)
    return WeatherSeries(ts, cols[:, 0], cols[:, 1], cols[:, 2], temp, wind)


def write_weather_csv(path, weather: WeatherSeries) -> None:
    n = len(weather)
    temp = weather.temp_c if weather.temp_c is not None else np.full(n, math.nan)
    wind = weather.wind_m_s if weather.wind_m_s is not None else np.full(n, math.nan)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(WEATHER_HEADER) + "\n")
        for i in range(n):
            opt = ["" if math.isnan(v) else f"{v:.3f}" for v in (temp[i], wind[i])]
            fh.write(f"{format_timestamp(weather.timestamps[i])},{weather.ghi_w_m2[i]:.3f},{weather.dni_w_m2[i]:.3f},{weather.dhi_w_m2[i]:.3f},{opt[0]},{opt[1]}\n")


def read_power_csv(path, label: str | None = None) -> PowerSeries:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != POWER_HEADER:
            raise SeriesError(f"{path}: power header must be {','.join(POWER_HEADER)}, got {','.join(header)}")
        rows = [r for r in reader if r]
    ts = np.array([parse_timestamp(r[0]) for r in rows], dtype="datetime64[s]")
    _check_hourly(ts, path)
    return PowerSeries(ts, [float(r[1]) for r in rows], label if label is not None else str(path))


def power_csv_text(series: PowerSeries) -> str:
    lines = [",".join(POWER_HEADER)]
    lines += [f"{format_timestamp(t)},{v:.6f}" for t, v in zip(series.timestamps, series.values_wh)]
    return "\n".join(lines) + "\n"


def write_power_csv(path, series: PowerSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(power_csv_text(series))
