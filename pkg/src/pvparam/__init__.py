"""Rooftop PV parameterization from segmentation masks and point clouds."""

__version__ = "0.1.0"

from .geometry import Affine, ArrayPolygon, GeometryError, OrientedRectangle, minimal_area_rectangle
from .layout import (
    CellDimensions,
    LayoutParams,
    ModuleLayout,
    ModuleTemplate,
    builtin_module_templates,
    infer_best_layout,
    place_virtual_grid,
    plan_cell_dimensions,
)
from .metrics import (
    BandMetrics,
    BaselineErrorMetrics,
    ValidationReport,
    area_iou,
    band_width_metrics,
    baseline_error_metrics,
    capacity_validation_report,
    dice_coefficient,
    hausdorff_distance,
    matching_score,
)
from .orientation import FitParams, OrientationEstimate, PlaneFit, PointSet, estimate_orientation, fit_plane_robust, plane_to_orientation
from .pipeline import (
    NeighborhoodRecord,
    PVSystemRecord,
    aggregate_by_neighborhood,
    export_pv_layer,
    import_pv_layer,
)
from .profile import (
    GenerationBand,
    ModelParams,
    PowerSeries,
    WeatherSeries,
    aggregate_profiles,
    assemble_gpb,
    baseline_scenario_profile,
    plane_of_array_irradiance,
    simulate_upper_bound_profile,
    solar_position,
)
from .runner import PipelineConfig, run_pipeline
from .vectorize import (
    GeoreferencedMask,
    RefineParams,
    extract_components,
    load_georeferenced_mask,
    refine_component_polygon,
    vectorize_mask,
)

__all__ = [name for name in dir() if not name.startswith("_")]
