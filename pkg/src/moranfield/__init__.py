"""Spatio-temporal dynamics of regional log population density.

The package estimates the expected movement of spatial units through the
Moran space (own log density vs neighbour average) as a smooth vector
field, selects its smoothing parameters, integrates long-run forecast
trajectories, and quantifies attractor membership uncertainty by
bootstrap.
"""

from .panel import (Crosswalk, CrosswalkEntry, DroppedUnit, IngestResult,
                    Panel, PanelError, UnitRecord, ZonePartition, ingest_panel,
                    read_crosswalk_csv, read_panel_csv, read_partitions_csv,
                    read_program_csv, select_window)
from .moran import (DispersionStats, MoranCurve, MoranError, MoranIResult,
                    MoranPointSet, TransitionSet, WeightMatrix, build_weights,
                    dispersion_stats, moran_curve, morans_i, to_moran,
                    transitions)
from .kde import (EPANECHNIKOV, AdaptiveDensity, KdeError, KernelSpec,
                  PilotDensity, adaptive_density, local_factors, pilot_density)
from .field import (EstimationError, EvalGrid, VectorFieldGrid,
                    direction_variance, estimate_rvf, write_field_csv)
from .flow import (FieldInterpolator, FlowError, IntegrationResult, Trajectory,
                   forecast_all, integrate, integrate_many,
                   write_trajectories_csv)
from .tuning import (ALPHA_GRID_DEFAULT, H_GRID_DEFAULT, TuneCandidate,
                     TuneResult, TuningError, tune)
from .inference import (Attractor, BasinReport, BootstrapEnsemble,
                        InferenceError, OverlayTable, ShareBand, annotate,
                        basin_probabilities, bootstrap_fields,
                        bootstrap_indices, direction_variance_grid,
                        find_attractors, flag_significance, policy_overlay,
                        report_dict)
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .datasets import demo_paths, load_demo

__version__ = "0.1.0"

__all__ = [
    "Crosswalk", "CrosswalkEntry", "DroppedUnit", "IngestResult", "Panel",
    "PanelError", "UnitRecord", "ZonePartition", "ingest_panel",
    "read_crosswalk_csv", "read_panel_csv", "read_partitions_csv",
    "read_program_csv", "select_window",
    "DispersionStats", "MoranCurve", "MoranError", "MoranIResult",
    "MoranPointSet", "TransitionSet", "WeightMatrix", "build_weights",
    "dispersion_stats", "moran_curve", "morans_i", "to_moran", "transitions",
    "EPANECHNIKOV", "AdaptiveDensity", "KdeError", "KernelSpec",
    "PilotDensity", "adaptive_density", "local_factors", "pilot_density",
    "EstimationError", "EvalGrid", "VectorFieldGrid", "direction_variance",
    "estimate_rvf", "write_field_csv",
    "FieldInterpolator", "FlowError", "IntegrationResult", "Trajectory",
    "forecast_all", "integrate", "integrate_many", "write_trajectories_csv",
    "ALPHA_GRID_DEFAULT", "H_GRID_DEFAULT", "TuneCandidate", "TuneResult",
    "TuningError", "tune",
    "Attractor", "BasinReport", "BootstrapEnsemble", "InferenceError",
    "OverlayTable", "ShareBand", "annotate", "basin_probabilities",
    "bootstrap_fields", "bootstrap_indices", "direction_variance_grid",
    "find_attractors", "flag_significance", "policy_overlay", "report_dict",
    "ConfigError", "RunConfig", "apply_overrides", "load_config",
    "demo_paths", "load_demo",
    "__version__",
]
