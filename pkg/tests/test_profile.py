import math

import numpy as np
import pandas as pd
import pvlib
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pvparam.metrics import band_width_metrics
from pvparam.profile import (
    ArraySpec,
    ModelParams,
    PowerSeries,
    SeriesError,
    WeatherSeries,
    aggregate_profiles,
    assemble_gpb,
    baseline_scenario_profile,
    cell_temperature,
    dc_energy_wh,
    parse_timestamp,
    plane_of_array_irradiance,
    read_power_csv,
    read_weather_csv,
    simulate_lower_bound_stub,
    simulate_profiles,
    simulate_upper_bound_profile,
    solar_position,
    write_power_csv,
    write_weather_csv,
)
from pvparam.synthetic import clear_sky_weather, hourly_timestamps

SITE = (51.44, 5.47)


def _week(start="2024-06-10T00:00:00", hours=24 * 7, temp=18.0):
    return clear_sky_weather(hourly_timestamps(start, hours), *SITE, temp_c=temp)


# ---------------------------------------------------------------------------
# Solar position
# ---------------------------------------------------------------------------


def test_equinox_noon_at_equator():
    # 2024-03-20 around 12:07 UTC the sun crosses the meridian at lon 0 close to the zenith
    zen, _ = solar_position(np.array(["2024-03-20T12:07:00"], dtype="datetime64[s]"), 0.0, 0.0)
    assert zen[0] < 1.0


def test_ranges_at_eindhoven():
    ts = hourly_timestamps("2024-01-01T00:00:00", 24 * 366)
    zen, az = solar_position(ts, *SITE)
    assert np.all((0 <= az) & (az < 360))
    assert np.all((0 <= zen) & (zen < 180))


def test_nrel_spa_reference_row():
    # published SPA example: 2003-10-17 12:30:30 local (UTC-7), Golden CO
    zen, az = solar_position(np.array(["2003-10-17T19:30:30"], dtype="datetime64[s]"), 39.742476, -105.1786)
    assert zen[0] == pytest.approx(50.11162, abs=0.5)
    assert az[0] == pytest.approx(194.34024, abs=0.5)


def test_against_pvlib_spa():
    rng = np.random.default_rng(0)
    secs = rng.integers(np.datetime64("1990-01-01").astype("datetime64[s]").astype(int), np.datetime64("2040-01-01").astype("datetime64[s]").astype(int), 300)
    ts = secs.astype("datetime64[s]")
    for lat, lon in [(51.44, 5.47), (-33.9, 18.4), (64.1, -21.9), (1.3, 103.8)]:
        zen, az = solar_position(ts, lat, lon)
        ref = pvlib.solarposition.spa_python(pd.DatetimeIndex(ts, tz="UTC"), lat, lon)
        up = ref["apparent_zenith"].to_numpy() < 89.0
        assert np.abs(zen - ref["apparent_zenith"].to_numpy())[up].max() < 0.5
        daz = np.abs((az - ref["azimuth"].to_numpy() + 180) % 360 - 180)
        assert daz[up & (ref["apparent_zenith"].to_numpy() < 85)].max() < 0.5


def test_latitude_checked():
    with pytest.raises(ValueError):
        solar_position(hourly_timestamps("2024-01-01T00:00:00", 2), 95.0, 0.0)


# ---------------------------------------------------------------------------
# Irradiance and energy
# ---------------------------------------------------------------------------


def test_poa_flat_overhead():
    assert plane_of_array_irradiance(1000, 1000, 0, 0, 180, 0, 0) == pytest.approx(1000.0)


def test_poa_back_to_sun():
    tilt = 40.0
    got = plane_of_array_irradiance(0, 800, 100, tilt, 0.0, 60.0, 180.0)
    assert got == pytest.approx(100 * (1 + math.cos(math.radians(tilt))) / 2)


def test_poa_worked_example():
    got = plane_of_array_irradiance(600, 800, 100, 35, 180, 40, 180, albedo=0.2)
    assert got == pytest.approx(898.9, abs=0.5)
    c = math.cos(math.radians(35))
    assert got == pytest.approx(800 * math.cos(math.radians(5)) + 100 * (1 + c) / 2 + 600 * 0.2 * (1 - c) / 2, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0, 1200), st.floats(0, 1000), st.floats(0, 500), st.floats(0, 89.9), st.floats(0, 360),
    st.floats(0, 120), st.floats(0, 360), st.floats(0, 0.9),
)
def test_poa_matches_pvlib_isotropic(ghi, dni, dhi, tilt, az, szen, saz, albedo):
    ref = pvlib.irradiance.get_total_irradiance(tilt, az, szen, saz, dni, ghi, dhi, albedo=albedo, model="isotropic")
    got = plane_of_array_irradiance(ghi, dni, dhi, tilt, az, szen, saz, albedo)
    assert got == pytest.approx(float(ref["poa_global"]), abs=1e-9 * (1 + abs(got)))


def test_energy_stc_and_night():
    p = ModelParams(derate=1.0)
    assert dc_energy_wh(4000.0, 1000.0, 25.0, p) == pytest.approx(4000.0)
    assert dc_energy_wh(4000.0, 0.0, 25.0, p) == 0.0


def test_energy_worked_example():
    p = ModelParams(derate=0.9, gamma_t_per_c=-0.004)
    assert dc_energy_wh(3500.0, 500.0, 45.0, p) == pytest.approx(3500 * 0.5 * 0.9 * 0.92, abs=1e-6)
    assert dc_energy_wh(3500.0, 500.0, 45.0, p) == pytest.approx(1449.0, abs=1e-6)


def test_cell_temperature():
    assert cell_temperature(20.0, 800.0, ModelParams(noct_coeff=0.025)) == pytest.approx(40.0)


def test_profile_zero_at_night_and_nonnegative():
    w = _week()
    prof = simulate_upper_bound_profile(ArraySpec(30, 200, 5000), w, SITE)
    zen, _ = solar_position(w.timestamps, *SITE)
    assert np.all(prof.values_wh >= 0)
    assert np.all(prof.values_wh[zen >= 90] == 0)
    assert prof.values_wh.max() > 0


def test_profile_without_temperature_skips_thermal_term():
    w = _week()
    bare = WeatherSeries(w.timestamps, w.ghi_w_m2, w.dni_w_m2, w.dhi_w_m2)
    p = ModelParams()
    got = simulate_upper_bound_profile(ArraySpec(25, 180, 1000), bare, SITE, p)
    zen, saz = solar_position(w.timestamps, *SITE)
    poa = plane_of_array_irradiance(w.ghi_w_m2, w.dni_w_m2, w.dhi_w_m2, 25, 180, zen, saz, p.albedo)
    assert np.allclose(got.values_wh, 1000 * poa / 1000 * p.derate)


def test_tilt_sensitivity_in_winter():
    w = clear_sky_weather(hourly_timestamps("2024-12-21T00:00:00", 24), *SITE, temp_c=2.0)
    south = simulate_upper_bound_profile(ArraySpec(35, 180, 1000), w, SITE)
    flat = simulate_upper_bound_profile(ArraySpec(0, 180, 1000), w, SITE)
    assert south.values_wh.sum() > flat.values_wh.sum()


# ---------------------------------------------------------------------------
# Baselines, band, aggregation
# ---------------------------------------------------------------------------


def test_baseline1_noop_for_south_35():
    w = _week()
    s = ArraySpec(35, 180, 3200)
    up = simulate_upper_bound_profile(s, w, SITE)
    b1 = baseline_scenario_profile([s], w, SITE, "baseline1")
    assert np.array_equal(b1.values_wh, up.values_wh)


def test_baseline2_below_baseline1_peak():
    w = _week()
    s = [ArraySpec(35, 180, 4000)]
    b1 = baseline_scenario_profile(s, w, SITE, "baseline1")
    b2 = baseline_scenario_profile(s, w, SITE, "baseline2")
    day = slice(0, 24)
    assert b2.values_wh[day].max() <= b1.values_wh[day].max()
    zen, _ = solar_position(w.timestamps, *SITE)
    noon = int(np.argmin(zen[day]))
    assert b2.values_wh[noon] <= b1.values_wh[day].max()


def test_baseline1_collapses_east_west():
    w = _week()
    east, west = ArraySpec(30, 90, 2500, "e"), ArraySpec(30, 270, 2500, "w")
    pe = baseline_scenario_profile([east], w, SITE, "baseline1")
    pw = baseline_scenario_profile([west], w, SITE, "baseline1")
    assert np.array_equal(pe.values_wh, pw.values_wh)
    both = baseline_scenario_profile([east, west], w, SITE, "baseline1")
    assert np.allclose(both.values_wh, 2 * pe.values_wh, rtol=0, atol=1e-9)
    m = band_width_metrics(pe, pw)
    assert m.mapw_pct == 0.0 and m.cpw_pct == 0.0


def test_baseline2_keeps_azimuth_but_flattens():
    w = _week()
    a, b = ArraySpec(40, 90, 1000), ArraySpec(10, 250, 1000)
    p = baseline_scenario_profile([a, b], w, SITE, "baseline2")
    flat = simulate_upper_bound_profile(ArraySpec(0, 180, 2000), w, SITE)
    assert np.allclose(p.values_wh, flat.values_wh)


def test_unknown_scenario():
    with pytest.raises(ValueError):
        baseline_scenario_profile([ArraySpec(1, 1, 1)], _week(hours=2), SITE, "baseline3")


def test_gpb_unchanged_when_ordered():
    ts = hourly_timestamps("2024-06-01T00:00:00", 3)
    up, lo = PowerSeries(ts, [10, 20, 30]), PowerSeries(ts, [5, 20, 1])
    band = assemble_gpb(up, lo)
    assert band.clamp_applied is False and band.lower is lo


def test_gpb_clamps():
    ts = hourly_timestamps("2024-06-01T00:00:00", 3)
    up, lo = PowerSeries(ts, [10, 20, 30]), PowerSeries(ts, [5, 25, 1])
    band = assemble_gpb(up, lo)
    assert band.clamp_applied is True
    assert band.lower.values_wh.tolist() == [5, 20, 1]


def test_gpb_composes_with_band_metrics():
    w = _week()
    up = simulate_upper_bound_profile(ArraySpec(30, 170, 3000), w, SITE)
    lo = simulate_lower_bound_stub(up, ModelParams(shading_derate=0.8))
    band = assemble_gpb(up, lo)
    assert not band.clamp_applied
    assert band_width_metrics(band.upper, band.lower) == band_width_metrics(up, lo)
    assert band_width_metrics(up, lo).cpw_pct == pytest.approx(20.0)


def test_gpb_misaligned():
    a = PowerSeries(hourly_timestamps("2024-06-01T00:00:00", 3), [1, 2, 3])
    b = PowerSeries(hourly_timestamps("2024-06-01T01:00:00", 3), [1, 2, 3])
    with pytest.raises(ValueError, match="row 0"):
        assemble_gpb(a, b)


def test_aggregate_examples():
    ts = hourly_timestamps("2024-06-01T00:00:00", 4)
    one = PowerSeries(ts, [1, 2, 3, 4])
    assert np.array_equal(aggregate_profiles([one]).values_wh, one.values_wh)
    total = aggregate_profiles([PowerSeries(ts, [100] * 4), PowerSeries(ts, [200] * 4)])
    assert total.values_wh.tolist() == [300] * 4
    with pytest.raises(ValueError):
        aggregate_profiles([])


def _community(n=27, seed=0):
    rng = np.random.default_rng(seed)
    return [ArraySpec(float(rng.uniform(0, 50)), float(rng.uniform(60, 300)), float(rng.uniform(1500, 9000)), f"b{i}") for i in range(n)]


def test_aggregate_matches_direct_community_simulation():
    w = _week()
    systems = _community()
    agg = aggregate_profiles(simulate_profiles(systems, w, SITE))
    # direct route: pvlib transposition for every roof at once, energy model written out
    zen, saz = solar_position(w.timestamps, *SITE)
    p = ModelParams()
    direct = np.zeros(len(w))
    for s in systems:
        poa = pvlib.irradiance.get_total_irradiance(s.tilt_deg, s.azimuth_deg, zen, saz, w.dni_w_m2, w.ghi_w_m2, w.dhi_w_m2, albedo=p.albedo, model="isotropic")["poa_global"]
        poa = np.maximum(np.asarray(poa), 0)
        tcell = w.temp_c + poa * p.noct_coeff
        direct += np.where(poa > 0, s.capacity_w * poa / 1000 * p.derate * np.maximum(0, 1 + p.gamma_t_per_c * (tcell - 25)), 0)
    assert np.allclose(agg.values_wh, direct, rtol=1e-6, atol=1e-6)


def test_linearity_in_capacity():
    w = _week()
    systems = _community(10, seed=3)
    doubled = [ArraySpec(s.tilt_deg, s.azimuth_deg, 2 * s.capacity_w) for s in systems]
    one = aggregate_profiles(simulate_profiles(systems, w, SITE))
    two = aggregate_profiles(simulate_profiles(doubled, w, SITE))
    assert np.array_equal(two.values_wh, 2 * one.values_wh)


def test_threads_preserve_order():
    w = _week(hours=48)
    systems = _community(12, seed=5)
    serial = simulate_profiles(systems, w, SITE, n_jobs=1)
    threaded = simulate_profiles(systems, w, SITE, n_jobs=4)
    assert [s.label for s in threaded] == [s.label for s in serial]
    assert all(np.array_equal(a.values_wh, b.values_wh) for a, b in zip(serial, threaded))


# ---------------------------------------------------------------------------
# Series and CSV
# ---------------------------------------------------------------------------


def test_series_validation():
    ts = hourly_timestamps("2024-06-01T00:00:00", 3)
    with pytest.raises(SeriesError):
        PowerSeries(ts, [1, -1, 2])
    with pytest.raises(SeriesError):
        PowerSeries(ts, [1, 2])
    with pytest.raises(SeriesError):
        WeatherSeries(ts[::-1], [0, 0, 0], [0, 0, 0], [0, 0, 0])
    with pytest.raises(SeriesError):
        WeatherSeries(ts, [0, -5, 0], [0, 0, 0], [0, 0, 0])


def test_timestamp_parsing():
    assert parse_timestamp("2024-06-01T12:00:00Z") == np.datetime64("2024-06-01T12:00:00")
    assert parse_timestamp("2024-06-01T14:00:00+02:00") == np.datetime64("2024-06-01T12:00:00")
    assert parse_timestamp("2024-06-01T12:00:00") == np.datetime64("2024-06-01T12:00:00")


def test_weather_csv_round_trip(tmp_path):
    w = _week(hours=30)
    write_weather_csv(tmp_path / "w.csv", w)
    assert (tmp_path / "w.csv").read_text().splitlines()[0] == "timestamp,ghi,dni,dhi,temp,wind"
    back = read_weather_csv(tmp_path / "w.csv")
    assert np.array_equal(back.timestamps, w.timestamps)
    assert np.allclose(back.dni_w_m2, w.dni_w_m2, atol=5e-4)
    assert np.allclose(back.temp_c, w.temp_c)


def test_weather_csv_optional_columns(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("timestamp,ghi,dni,dhi,temp,wind\n2024-06-01T10:00:00Z,500,400,100,,\n2024-06-01T11:00:00Z,600,500,100,,\n")
    w = read_weather_csv(p)
    assert w.temp_c is None and w.wind_m_s is None


def test_hourly_enforced(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("timestamp,ghi,dni,dhi,temp,wind\n2024-06-01T10:00:00Z,1,1,1,,\n2024-06-01T11:00:00Z,1,1,1,,\n2024-06-01T11:30:00Z,1,1,1,,\n")
    with pytest.raises(SeriesError, match="row 3"):
        read_weather_csv(p)
    p.write_text("timestamp,energy_wh\n2024-06-01T10:00:00Z,1\n2024-06-01T12:00:00Z,1\n")
    with pytest.raises(SeriesError):
        read_power_csv(p)


def test_bad_headers(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("time,energy\n")
    with pytest.raises(SeriesError):
        read_power_csv(p)
    with pytest.raises(SeriesError):
        read_weather_csv(p)


def test_power_csv_round_trip(tmp_path):
    s = PowerSeries(hourly_timestamps("2024-06-01T00:00:00", 5), [0, 1.5, 2.25, 100.125, 0], "x")
    write_power_csv(tmp_path / "p.csv", s)
    text = (tmp_path / "p.csv").read_text().splitlines()
    assert text[0] == "timestamp,energy_wh" and text[1] == "2024-06-01T00:00:00Z,0.000000"
    back = read_power_csv(tmp_path / "p.csv", "x")
    assert np.array_equal(back.values_wh, s.values_wh) and np.array_equal(back.timestamps, s.timestamps)
