"""Geometry agreement, capacity validation and generation-band statistics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import shapely

from .geometry import GeometryError, as_geometry, intersection_areas

DEFAULT_HD_STEP_M = 0.05
DEFAULT_EPS_POWER = 1.0


# ---------------------------------------------------------------------------
# Polygon agreement
# ---------------------------------------------------------------------------


def _areal(poly):
    geom = as_geometry(poly)
    if not geom.is_empty and not geom.is_valid:
        raise GeometryError(f"invalid polygon: {shapely.is_valid_reason(geom)}")
    return geom


def _overlap_areas(a, b) -> tuple[float, float, float]:
    ga, gb = _areal(a), _areal(b)
    # canonical operand order makes the overlay exactly symmetric
    first, second = sorted((ga, gb), key=shapely.to_wkb)
    inter = float(intersection_areas(first, second)[0]) if not (ga.is_empty or gb.is_empty) else 0.0
    return inter, ga.area, gb.area


def area_iou(a, b, with_flag: bool = False):
    """Intersection over union of two polygons.

    Two empty inputs give 0.0; with ``with_flag`` a ``(value, both_empty)``
    pair is returned instead.
    """
    inter, area_a, area_b = _overlap_areas(a, b)
    union = area_a + area_b - inter
    both_empty = union <= 0.0
    value = 0.0 if both_empty else min(1.0, max(0.0, inter / union))
    return (value, both_empty) if with_flag else value


def dice_coefficient(a, b) -> float:
    inter, area_a, area_b = _overlap_areas(a, b)
    total = area_a + area_b
    return 0.0 if total <= 0.0 else min(1.0, max(0.0, 2.0 * inter / total))


def _boundary_samples(geom, step: float) -> np.ndarray:
    rings = []
    for part in getattr(geom, "geoms", [geom]):
        rings.append(part.exterior)
        rings.extend(part.interiors)
    coords = [np.asarray(shapely.segmentize(r, step).coords) for r in rings]
    return np.concatenate(coords)


def hausdorff_distance(a, b, step: float = DEFAULT_HD_STEP_M) -> float:
    """Symmetric Hausdorff distance between polygon boundaries.

    Each boundary is densified to arc-length spacing <= ``step`` (original
    vertices kept) and measured against the exact other boundary, so the
    result is within ``step / 2`` of the continuous value.
    """
    ga, gb = _areal(a), _areal(b)
    if ga.is_empty or gb.is_empty:
        raise GeometryError("Hausdorff distance of an empty polygon is undefined")
    ba, bb = ga.boundary, gb.boundary
    sa = shapely.points(_boundary_samples(ga, step))
    sb = shapely.points(_boundary_samples(gb, step))
    return float(max(shapely.distance(sa, bb).max(), shapely.distance(sb, ba).max()))


def matching_score(candidate, footprint, hd_step: float = DEFAULT_HD_STEP_M, hd_scale: float | None = None) -> float:
    """IoU / (1 + HD), HD in map units (meters).

    ``hd_scale`` divides HD first (e.g. the footprint MBR diagonal) to make
    the score unit-free.
    """
    gc = _areal(candidate)
    if gc.is_empty or gc.area == 0.0:
        return 0.0
    iou = area_iou(gc, footprint)
    if iou == 0.0:
        return 0.0
    hd = hausdorff_distance(gc, footprint, hd_step)
    if hd_scale:
        hd /= hd_scale
    return iou / (1.0 + hd)


# ---------------------------------------------------------------------------
# Capacity validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    mae_kwp: float
    mape_pct: float
    r2: float
    r2_regression: float
    within_margin_fraction: float
    margin_pct: float
    quartiles_recorded_kwp: tuple[float, float, float]
    quartiles_predicted_kwp: tuple[float, float, float]
    per_region: list[tuple[str, float, float, float]]  # (region_id, recorded, predicted, ape_pct)
    n_regions: int
    n_excluded_zero: int = 0
    quartile_delta_pct: tuple[float, float, float] = (math.nan,) * 3
    quartile_matched_ape_pct: tuple[float, float, float] = (math.nan,) * 3
    unmatched_ids: list[str] = field(default_factory=list)

    def rows(self) -> list[tuple[str, float, str]]:
        out = [
            ("n_regions", self.n_regions, "count"),
            ("n_excluded_zero_recorded", self.n_excluded_zero, "count"),
            ("mae", self.mae_kwp, "kWp"),
            ("mape", self.mape_pct, "%"),
            ("r2", self.r2, "-"),
            ("r2_regression", self.r2_regression, "-"),
            ("margin", self.margin_pct, "%"),
            ("within_margin_fraction", self.within_margin_fraction, "-"),
        ]
        for k, q in enumerate(("q1", "q2", "q3")):
            out.append((f"recorded_{q}", self.quartiles_recorded_kwp[k], "kWp"))
            out.append((f"predicted_{q}", self.quartiles_predicted_kwp[k], "kWp"))
            out.append((f"quartile_delta_{q}", self.quartile_delta_pct[k], "%"))
            out.append((f"quartile_matched_region_ape_{q}", self.quartile_matched_ape_pct[k], "%"))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value", "unit"])
        for name, value, unit in self.rows():
            w.writerow([name, _fmt(value), unit])
        return buf.getvalue()

    def to_text(self) -> str:
        qr = " / ".join(f"{q:.0f}" for q in self.quartiles_recorded_kwp)
        qp = " / ".join(f"{q:.0f}" for q in self.quartiles_predicted_kwp)
        lines = [
            f"Capacity validation over {self.n_regions} regions",
            f"  MAE   {self.mae_kwp:.2f} kWp",
            f"  MAPE  {self.mape_pct:.2f} %"
            + (f"  ({self.n_excluded_zero} regions with zero recorded capacity excluded)" if self.n_excluded_zero else ""),
            f"  R2    {self.r2:.4f} (coefficient of determination, recorded as reference)",
            f"  R2    {self.r2_regression:.4f} (least-squares regression fit)",
            f"  within +/-{self.margin_pct:g}%: {100 * self.within_margin_fraction:.2f} % of regions",
            f"  recorded quartiles:  {qr} kWp",
            f"  predicted quartiles: {qp} kWp",
            "  quartile-vs-quartile error: " + ", ".join(f"{d:+.2f} %" for d in self.quartile_delta_pct),
            "  APE of regions nearest each recorded quartile: "
            + ", ".join(f"{d:.2f} %" for d in self.quartile_matched_ape_pct),
        ]
        if self.unmatched_ids:
            lines.append(f"  unmatched region ids ignored: {', '.join(self.unmatched_ids)}")
        return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.6f}"


def capacity_validation_report(pred, recorded, margin_pct: float = 25.0) -> ValidationReport:
    """MAE, MAPE, R2, APE and margin statistics of predicted vs recorded kWp per region."""
    pred_map = {str(k): float(v) for k, v in pred}
    rec_pairs = [(str(k), float(v)) for k, v in recorded]
    joined = [(rid, r, pred_map[rid]) for rid, r in rec_pairs if rid in pred_map]
    unmatched = sorted(set(pred_map) ^ {rid for rid, _ in rec_pairs})
    if not joined:
        raise ValueError("no region ids shared between predictions and records")
    ids = [j[0] for j in joined]
    r = np.array([j[1] for j in joined])
    p = np.array([j[2] for j in joined])
    err = np.abs(p - r)
    pos = r > 0
    ape = np.full(len(r), np.nan)
    ape[pos] = err[pos] / r[pos] * 100.0
    mape = float(np.mean(ape[pos])) if pos.any() else math.nan
    within = float(np.mean(ape[pos] <= margin_pct)) if pos.any() else math.nan
    ss_res = float(np.sum((p - r) ** 2))
    ss_tot = float(np.sum((r - r.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else math.nan
    if len(r) > 1 and np.std(r) > 0 and np.std(p) > 0:
        r2_reg = float(np.corrcoef(r, p)[0, 1] ** 2)
    else:
        r2_reg = math.nan
    qr = tuple(float(q) for q in np.percentile(r, [25, 50, 75], method="linear"))
    qp = tuple(float(q) for q in np.percentile(p, [25, 50, 75], method="linear"))
    q_delta = tuple((b - a) / a * 100.0 if a else math.nan for a, b in zip(qr, qp))
    q_match = []
    for q in qr:
        k = int(np.argmin(np.abs(r - q)))
        q_match.append(float(ape[k]))
    return ValidationReport(
        mae_kwp=float(err.mean()),
        mape_pct=mape,
        r2=r2,
        r2_regression=r2_reg,
        within_margin_fraction=within,
        margin_pct=margin_pct,
        quartiles_recorded_kwp=qr,
        quartiles_predicted_kwp=qp,
        per_region=[(i, float(a), float(b), float(c)) for i, a, b, c in zip(ids, r, p, ape)],
        n_regions=len(joined),
        n_excluded_zero=int((~pos).sum()),
        quartile_delta_pct=q_delta,
        quartile_matched_ape_pct=tuple(q_match),
        unmatched_ids=unmatched,
    )


# ---------------------------------------------------------------------------
# Generation band and baseline errors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BandMetrics:
    mapw_pct: float
    cpw_pct: float
    n_used: int


@dataclass(frozen=True)
class BaselineErrorMetrics:
    mape_h_pct: float
    mape_l_pct: float
    cpe_h_pct: float
    cpe_l_pct: float
    n_used_h: int
    n_used_l: int

    @property
    def n_used(self) -> int:
        return min(self.n_used_h, self.n_used_l)


def _values(series) -> np.ndarray:
    return np.asarray(getattr(series, "values_wh", series), dtype=float)


def _check_same_length(*arrays) -> None:
    n = {len(a) for a in arrays}
    if len(n) != 1:
        raise ValueError(f"series lengths differ: {sorted(n)}")


def band_width_metrics(upper, lower, eps_power: float = DEFAULT_EPS_POWER) -> BandMetrics:
    """Mean absolute and cumulative percentage width of the band, daylight hours only."""
    up, lo = _values(upper), _values(lower)
    _check_same_length(up, lo)
    use = up > eps_power
    n = int(use.sum())
    if n == 0:
        raise ValueError(f"no timestamp has upper-bound energy above {eps_power} Wh")
    u, l = up[use], lo[use]
    mapw = 100.0 * float(np.mean(np.abs(u - l) / u))
    cpw = 100.0 * float(np.sum(u - l) / np.sum(u))
    return BandMetrics(mapw, cpw, n)


def _percentage_errors(base: np.ndarray, ref: np.ndarray, eps_power: float) -> tuple[float, float, int]:
    use = ref > eps_power
    n = int(use.sum())
    if n == 0:
        raise ValueError(f"no timestamp has reference energy above {eps_power} Wh")
    b, r = base[use], ref[use]
    mape = 100.0 * float(np.mean(np.abs(b - r) / r))
    cpe = 100.0 * float(np.sum(b - r) / np.sum(r))
    return mape, cpe, n


def baseline_error_metrics(baseline, upper, lower, eps_power: float = DEFAULT_EPS_POWER) -> BaselineErrorMetrics:
    """MAPE and signed CPE of a baseline against the upper and lower references.

    CPE is positive when the baseline over-produces relative to the reference.
    """
    b, up, lo = _values(baseline), _values(upper), _values(lower)
    _check_same_length(b, up, lo)
    mape_h, cpe_h, n_h = _percentage_errors(b, up, eps_power)
    mape_l, cpe_l, n_l = _percentage_errors(b, lo, eps_power)
    return BaselineErrorMetrics(mape_h, mape_l, cpe_h, cpe_l, n_h, n_l)


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value", "unit"])
    for name, value, unit in rows:
        w.writerow([name, _fmt(value), unit])
    return buf.getvalue()


def band_metric_rows(band: BandMetrics, prefix: str = "") -> list:
    return [
        (f"{prefix}mapw", band.mapw_pct, "%"),
        (f"{prefix}cpw", band.cpw_pct, "%"),
        (f"{prefix}n_used", band.n_used, "count"),
    ]


def baseline_metric_rows(m: BaselineErrorMetrics, prefix: str = "") -> list:
    return [
        (f"{prefix}mape_h", m.mape_h_pct, "%"),
        (f"{prefix}mape_l", m.mape_l_pct, "%"),
        (f"{prefix}cpe_h", m.cpe_h_pct, "%"),
        (f"{prefix}cpe_l", m.cpe_l_pct, "%"),
        (f"{prefix}n_used_h", m.n_used_h, "count"),
        (f"{prefix}n_used_l", m.n_used_l, "count"),
    ]
