"""Radar-based dynamic occupancy grid mapping with pluggable state correction."""

from .corrector import CorrectionGrid, GtBox, OracleNoise, label_grid, oracle_corrector
from .evalkit import (ApParams, ClusterParams, DetectedObject, GridMetrics,
                      average_precision, extract_objects, grid_metrics)
from .fusion import FusionParams, distance_field, fuse_cell, fuse_grid
from .grid import (D, F, S, U, DogmFrame, GridSpec, Pose, apply_transition,
                   bayes_update, default_transition_matrix, realign)
from .ism import IsmParams, MeasurementGrid, RadarDetection, RadarScan, build_measurement_grid
from .particles import FilterParams, ParticleSet
from .pipeline import PipelineConfig, run_ab, run_pipeline
from .simworld import ScenarioConfig, load_scenario, simulate

__version__ = "0.1.0"
