"""Subject-adaptive sparse linear modeling for multi-subject daily data."""

from .data import ObservationTable, Schema, expand_design, ingest_csv, standardize
from .elimination import EliminationConfig, backward_eliminate, tune_seed
from .gating import GatingConfig, gate_predictions, z_profile
from .linalg import f_cdf, fit_ols
from .pipeline import RunConfig, run_pipeline
from .thresholds import ThresholdSet, discretize, search_threshold_binary, search_threshold_ternary

__all__ = [
    "EliminationConfig", "GatingConfig", "ObservationTable", "RunConfig", "Schema",
    "ThresholdSet", "backward_eliminate", "discretize", "expand_design", "f_cdf", "fit_ols",
    "gate_predictions", "ingest_csv", "run_pipeline", "search_threshold_binary",
    "search_threshold_ternary", "standardize", "tune_seed", "z_profile",
]
