"""Acceptance criteria 1-9; each test prints one PASS/FAIL line."""

import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats
from shapely import affinity
from shapely.geometry import box
from sklearn.metrics import r2_score

from oracles import circular_diff_deg, mask_iou, raster_overlap, raster_pixel_centres, star_polygon, sweep_mbr_area
from pvparam.demo import write_demo_scene
from pvparam.geometry import minimal_area_rectangle
from pvparam.layout import ORIENTATIONS, LayoutParams, builtin_module_templates, infer_best_layout, plan_cell_dimensions
from pvparam.metrics import area_iou, band_width_metrics, baseline_error_metrics, capacity_validation_report, dice_coefficient
from pvparam.orientation import FitParams, PointSet, fit_plane_robust, plane_to_orientation
from pvparam.profile import ArraySpec, aggregate_profiles, baseline_scenario_profile, simulate_profiles
from pvparam.runner import execute, load_config
from pvparam.synthetic import clear_sky_weather, hourly_timestamps, mask_scene_suite, plane_points
from pvparam.vectorize import GeoreferencedMask, vectorize_mask

pytestmark = pytest.mark.slow


def _report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


def test_criterion_1_overlap_metrics_vs_raster(capsys):
    rng = np.random.default_rng(2024)
    pairs = []
    for _ in range(1000):
        a = star_polygon(rng, centre=tuple(rng.uniform(-3, 3, 2)), r_min=0.5, r_max=3.0)
        b = star_polygon(rng, centre=tuple(rng.uniform(-3, 3, 2)), r_min=0.5, r_max=3.0)
        pairs.append((a, b))
    t0 = time.process_time()
    ours = [(area_iou(a, b), dice_coefficient(a, b)) for a, b in pairs]
    t_metric = time.process_time() - t0
    worst, worst_id = 0.0, 0.0
    for (a, b), (iou, dice) in zip(pairs, ours):
        r_iou, r_dice = raster_overlap(a, b, 2048)
        worst = max(worst, abs(iou - r_iou), abs(dice - r_dice))
        worst_id = max(worst_id, abs(dice - 2 * iou / (1 + iou)))
    t_total = time.process_time() - t0
    ok = worst <= 1e-3 and worst_id <= 1e-9 and t_total <= 60
    _report(capsys, 1, ok, f"max |metric - raster| {worst:.2e} (<= 1e-3), identity {worst_id:.1e} (<= 1e-9), "
            f"metrics {t_metric:.2f} s, with oracle {t_total:.1f} s (<= 60 s)")


def test_criterion_2_mbr_vs_sweep(capsys):
    rng = np.random.default_rng(7)
    worst, above_raw = 0.0, 0
    for _ in range(1000):
        n = int(rng.integers(3, 60))
        pts = rng.normal(size=(n, 2)) * rng.uniform(0.2, 20, 2) + rng.uniform(-1e3, 1e3, 2)
        area = minimal_area_rectangle(pts).area
        ref = sweep_mbr_area(pts)
        worst = max(worst, abs(area - ref) / ref)
        above_raw += area > sweep_mbr_area(pts, zoom=False) * (1 + 1e-12)
    ok = worst <= 1e-6 and above_raw == 0
    _report(capsys, 2, ok, f"max relative diff {worst:.2e} (<= 1e-6) against the 0.1 deg sweep, {above_raw} hulls above the raw sweep")


def test_criterion_3_vectorization_fidelity(capsys):
    ious = {}
    for scene in mask_scene_suite():
        polys = vectorize_mask(GeoreferencedMask.from_array(scene.noisy))
        got = raster_pixel_centres([p.to_shapely() for p in polys], scene.clean.shape)
        ious[scene.name] = mask_iou(got, scene.clean)
    low = min(ious, key=ious.get)
    ok = len(ious) == 20 and all(v >= 0.95 for v in ious.values())
    _report(capsys, 3, ok, f"20 scenes, min IoU {ious[low]:.4f} ({low}), mean {np.mean(list(ious.values())):.4f} (>= 0.95 each)")


def _orientation_trials(params):
    rng = np.random.default_rng(0)
    grid = [(t, a) for t in (5, 15, 25, 35, 45) for a in range(0, 360, 45)]
    good = 0
    for k in range(200):
        tilt, az = grid[k % len(grid)]
        pts = plane_points(500, tilt, az, rng, noise_sigma=0.05, outlier_fraction=0.2)
        est = plane_to_orientation(fit_plane_robust(PointSet(pts), params, seed=k), params)
        good += abs(est.tilt_deg - tilt) <= 1.0 and circular_diff_deg(est.azimuth_deg, az) <= 2.0
    return good


def test_criterion_4_orientation_recovery(capsys):
    # tilt 5 deg sits on the default flat threshold, which would replace the recovered azimuth by 180
    params = FitParams(flat_threshold_deg=2.5)
    good = _orientation_trials(params)
    default = _orientation_trials(FitParams())
    ok = good >= 190
    _report(capsys, 4, ok, f"{good}/200 trials within 1.0 deg tilt and 2.0 deg azimuth (>= 95%) at flat threshold 2.5 deg; "
            f"{default}/200 at the default 5 deg threshold")


def test_criterion_5_layout_exactness(capsys):
    templates = builtin_module_templates()
    params = LayoutParams(grid_alignment="downslope")
    fails, n, cand = [], 0, set()
    for t in templates:
        for o in ORIENTATIONS:
            for tilt in (0.0, 20.0, 35.0):
                cell = plan_cell_dimensions(t, o, tilt)
                for p in (1, 2, 3):
                    for q in (1, 2, 3):
                        # p modules across the slope, q up the slope, turned 17 deg; the roof faces bearing 163
                        fp = affinity.rotate(box(0, 0, p * cell.along_mbr_long_m, q * cell.along_mbr_short_m), 17, origin=(0, 0))
                        lay = infer_best_layout(fp, tilt, templates, params, downslope_bearing_deg=163.0)
                        n += 1
                        cand.add(lay.n_candidates)
                        if not (lay.module_count == p * q and lay.template_index == t.index and lay.orientation == o
                                and lay.score >= 0.95 and lay.n_candidates == 46):
                            fails.append((t.index, o, tilt, p, q, lay.template_index, lay.orientation, lay.module_count, lay.score))
    same_count = sum(f[7] == f[3] * f[4] and f[8] >= 0.95 for f in fails)
    twins = sum(f[0] != f[5] for f in fails)
    detail = f"{n - len(fails)}/{n} footprints recover template, orientation and count; candidates per footprint {sorted(cand)}"
    if fails:
        detail += (f"; {same_count} of the {len(fails)} misses still place p*q modules at score >= 0.95, "
                   f"{twins} picking a lower-index template with the same plan size, {len(fails) - twins} the other "
                   f"orientation of a 2:1 module, which tiles the same rectangle")
    _report(capsys, 5, not fails, detail)


def test_criterion_6_band_and_baseline_formulas(capsys):
    upper, lower, base = [1000, 2000, 4000], [800, 1500, 3600], [900, 1800, 4200]
    band = band_width_metrics(upper, lower)
    err = baseline_error_metrics(base, upper, lower)
    under = baseline_error_metrics([90, 90], [100, 100], [100, 100])
    checks = [
        abs(band.mapw_pct - 55 / 3) <= 1e-6 and round(band.mapw_pct, 3) == 18.333,
        abs(band.cpw_pct - 110 / 7) <= 1e-6 and round(band.cpw_pct, 3) == 15.714,
        abs(err.mape_h_pct - 25 / 3) <= 1e-6 and round(err.mape_h_pct, 3) == 8.333,
        abs(err.cpe_h_pct + 10 / 7) <= 1e-6 and round(err.cpe_h_pct, 4) == -1.4286,
        under.cpe_h_pct < 0,
    ]
    _report(capsys, 6, all(checks), f"MAPW {band.mapw_pct:.6f}, CPW {band.cpw_pct:.6f}, MAPE_H {err.mape_h_pct:.6f}, "
            f"CPE_H {err.cpe_h_pct:.6f}; under-production gives CPE_H {under.cpe_h_pct:.1f}")


def test_criterion_7_validation_report(capsys):
    rep = capacity_validation_report([("a", 100), ("b", 200), ("c", 300)], [("a", 110), ("b", 190), ("c", 330)], 25)
    exact_mape = 100 * (10 / 110 + 10 / 190 + 30 / 330) / 3
    small = (abs(rep.mae_kwp - 50 / 3) <= 1e-6 and round(rep.mae_kwp, 3) == 16.667 and abs(rep.mape_pct - exact_mape) <= 1e-6
             and round(rep.mape_pct, 3) == 7.815 and rep.within_margin_fraction == 1.0)
    rng = np.random.default_rng(99)
    rec = rng.uniform(50, 2000, 100)
    injected = rng.normal(0, 0.2, 100)
    pred = rec * (1 + injected)
    ids = [f"n{i:03d}" for i in range(100)]
    big = capacity_validation_report(list(zip(ids, pred)), list(zip(ids, rec)))
    d_r2 = abs(big.r2 - r2_score(rec, pred))
    d_reg = abs(big.r2_regression - stats.linregress(rec, pred).rvalue ** 2)
    ok = small and d_r2 <= 1e-9 and d_reg <= 1e-9
    _report(capsys, 7, ok, f"MAE {rep.mae_kwp:.6f}, MAPE {rep.mape_pct:.6f}, within {rep.within_margin_fraction}; "
            f"100-region R2 {big.r2:.6f} off the oracle by {d_r2:.1e}, regression R2 off by {d_reg:.1e}")


def test_criterion_8_end_to_end_determinism(capsys, tmp_path):
    t0 = time.perf_counter()
    snaps = []
    for k in range(2):
        cfg = write_demo_scene(tmp_path / f"run{k}", seed=0)
        res = execute(load_config(cfg))
        snaps.append({p.name: p.read_bytes() for p in res.outputs})
    elapsed = time.perf_counter() - t0
    rerun = execute(load_config(tmp_path / "run1" / "config.txt"))
    rerun_same = {p.name: p.read_bytes() for p in rerun.outputs} == snaps[1] and not rerun.ran
    kinds = sorted({name.rsplit(".", 1)[-1] for name in snaps[0]})
    ok = snaps[0] == snaps[1] and len(snaps[0]) >= 14 and elapsed <= 120 and rerun_same
    _report(capsys, 8, ok, f"{len(snaps[0])} outputs ({', '.join(kinds)}) byte-identical across two fresh runs; "
            f"both runs {elapsed:.1f} s (<= 120 s); cached rerun skipped every stage: {rerun_same}")


def test_criterion_9_baseline_mechanism(capsys):
    site = (51.44, 5.47)
    weather = clear_sky_weather(hourly_timestamps("2024-06-10T00:00:00", 24 * 7), *site, temp_c=18.0)
    systems = [ArraySpec(35, 90, 4000, "east"), ArraySpec(30, 270, 3500, "west"), ArraySpec(20, 180, 5000, "south"),
               ArraySpec(45, 135, 3000, "south_east"), ArraySpec(10, 300, 2500, "north_west")]
    aware = aggregate_profiles(simulate_profiles(systems, weather, site))
    b1 = baseline_scenario_profile(systems, weather, site, "baseline1")
    # the collapse: any reshuffle of the orientations leaves baseline1 unchanged
    shuffled = [replace(s, tilt_deg=o.tilt_deg, azimuth_deg=o.azimuth_deg) for s, o in zip(systems, systems[::-1])]
    varied = [replace(s, tilt_deg=float(k * 9), azimuth_deg=float(k * 70)) for k, s in enumerate(systems)]
    collapse = (np.array_equal(b1.values_wh, baseline_scenario_profile(shuffled, weather, site, "baseline1").values_wh)
                and np.array_equal(b1.values_wh, baseline_scenario_profile(varied, weather, site, "baseline1").values_wh))
    ok = b1.values_wh.max() > aware.values_wh.max() and collapse
    _report(capsys, 9, ok, f"baseline1 peak {b1.values_wh.max():.1f} Wh vs configuration-aware peak {aware.values_wh.max():.1f} Wh; "
            f"orientation collapse exact: {collapse}")
