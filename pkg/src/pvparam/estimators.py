"""scikit-learn style wrappers over the functional core.

Hyperparameters live in ``__init__`` and are reachable through
``get_params``/``set_params``, so the stages can be cloned, grid-searched
or dropped into a ``Pipeline``. Nothing here adds behaviour of its own.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .layout import LayoutParams, builtin_module_templates, infer_best_layout
from .orientation import FitParams, PointSet, fit_plane_robust, plane_to_orientation
from .vectorize import GeoreferencedMask, RefineParams, vectorize_mask


class MaskVectorizer(TransformerMixin, BaseEstimator):
    """Transforms georeferenced masks into lists of footprint polygons."""

    def __init__(self, max_depth=4, stop_ratio=0.02, min_mismatch_px=4, min_component_px=4, min_area_m2=1.2, min_extent_m=0.05, connectivity=8, min_fill_ratio=0.5):
        self.max_depth = max_depth
        self.stop_ratio = stop_ratio
        self.min_mismatch_px = min_mismatch_px
        self.min_component_px = min_component_px
        self.min_area_m2 = min_area_m2
        self.min_extent_m = min_extent_m
        self.connectivity = connectivity
        self.min_fill_ratio = min_fill_ratio

    def _params(self) -> RefineParams:
        return RefineParams(**self.get_params())

    def fit(self, X=None, y=None):
        self.params_ = self._params()
        return self

    def transform(self, X):
        masks = [X] if isinstance(X, GeoreferencedMask) else list(X)
        params = getattr(self, "params_", None) or self._params()
        return [vectorize_mask(m, params) for m in masks]


class PlaneOrientationEstimator(BaseEstimator):
    """Robust plane fit of one (n, 3) point array; exposes tilt and azimuth after ``fit``."""

    def __init__(self, min_points=10, iterations=200, inlier_dist_m=0.10, flat_threshold_deg=5.0, random_state=0):
        self.min_points = min_points
        self.iterations = iterations
        self.inlier_dist_m = inlier_dist_m
        self.flat_threshold_deg = flat_threshold_deg
        self.random_state = random_state

    def fit(self, X, y=None):
        params = FitParams(self.min_points, self.iterations, self.inlier_dist_m, self.flat_threshold_deg)
        plane = fit_plane_robust(PointSet(X), params, seed=self.random_state)
        est = plane_to_orientation(plane, params)
        self.plane_ = plane
        self.normal_ = np.asarray(plane.normal)
        self.tilt_deg_ = est.tilt_deg
        self.azimuth_deg_ = est.azimuth_deg
        self.confidence_ = est.confidence
        self.n_inliers_ = plane.inlier_count
        return self

    def residuals(self, X) -> np.ndarray:
        check_is_fitted(self, "plane_")
        return np.asarray(X, dtype=float) @ self.normal_ - self.plane_.offset

    def score(self, X, y=None) -> float:
        """Negative RMS orthogonal distance, so higher is better."""
        r = self.residuals(X)
        return -float(np.sqrt(np.mean(r**2)))


class LayoutEstimator(BaseEstimator):
    """Chooses a module template and orientation per footprint."""

    def __init__(self, coverage_tau=0.5, gap_m=0.0, grid_alignment="mbr_short", anchor_sweep=1, hd_step_m=0.05, hd_normalize=False, templates=None):
        self.coverage_tau = coverage_tau
        self.gap_m = gap_m
        self.grid_alignment = grid_alignment
        self.anchor_sweep = anchor_sweep
        self.hd_step_m = hd_step_m
        self.hd_normalize = hd_normalize
        self.templates = templates

    def fit(self, X=None, y=None):
        self.params_ = LayoutParams(self.coverage_tau, self.gap_m, self.grid_alignment, self.anchor_sweep, self.hd_step_m, self.hd_normalize)
        self.templates_ = list(self.templates) if self.templates is not None else builtin_module_templates()
        return self

    def predict(self, footprints, tilts_deg, downslope_bearings_deg=None):
        """One ModuleLayout per footprint."""
        check_is_fitted(self, "params_")
        tilts = np.broadcast_to(np.asarray(tilts_deg, dtype=float), (len(footprints),))
        bearings = [None] * len(footprints) if downslope_bearings_deg is None else list(downslope_bearings_deg)
        return [
            infer_best_layout(fp, float(t), self.templates_, self.params_, downslope_bearing_deg=b)
            for fp, t, b in zip(footprints, tilts, bearings)
        ]

    def predict_capacity_w(self, footprints, tilts_deg, downslope_bearings_deg=None) -> np.ndarray:
        return np.array([lay.capacity_w for lay in self.predict(footprints, tilts_deg, downslope_bearings_deg)])
