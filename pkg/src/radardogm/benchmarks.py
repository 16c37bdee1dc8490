"""Deterministic desk-scale benchmark suite.

Ten small scenarios mixing radially moving targets (which the conventional
grid catches), perpendicular or slow crossers (which it misclassifies as
static), walls, clutter, and imperfect detection.  The A/B comparison runs
each scenario with and without a corrector and pools metrics across the
suite.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from . import evalkit
from .corrector import OracleNoise
from .particles import FilterParams
from .pipeline import PipelineConfig, label_truth_states, run_pipeline
from .simworld import ScenarioConfig, scenario_from_dict

GRID_CELLS = 160          # 32 m x 32 m at 0.2 m
RESOLUTION = 0.2


def _scenario(name, seed, actors, walls=(), duration=1.6, ego=None,
              clutter=0.5, detection_prob=0.9):
    return scenario_from_dict({
        "name": name,
        "duration": duration,
        "dt": 0.05,
        "seed": seed,
        "ego": ego or {"start": [0, 0], "velocity": [0, 0]},
        "actors": list(actors),
        "walls": list(walls),
        "sensor": {
            "max_range": 30.0,
            "sigma_range": 0.05,
            "sigma_azimuth": 0.003,
            "sigma_range_rate": 0.05,
            "detections_per_actor_face": 4,
            "clutter_rate": clutter,
            "detection_prob": detection_prob,
        },
    })


def _adult(x, y, vx, vy):
    return {"class_id": "adult", "extent": [0.5, 0.5],
            "motion": {"start": [x, y], "velocity": [vx, vy]}}


def benchmark_scenarios() -> list[ScenarioConfig]:
    return [
        _scenario("ped_cross_near", 101,
                  [_adult(8.0, -1.6, 0.0, 1.4)],
                  walls=[{"start": [14.0, -6.0], "end": [14.0, 6.0]}]),
        _scenario("ped_cross_far", 102, [_adult(12.0, 1.8, 0.0, -1.3)]),
        _scenario("bike_cross", 103,
                  [{"class_id": "bicycle", "extent": [1.8, 0.6],
                    "motion": {"start": [10.0, -2.5], "velocity": [0.0, 2.5]}}]),
        _scenario("car_approach", 104,
                  [{"class_id": "car", "extent": [4.2, 1.8],
                    "motion": {"start": [14.5, 0.5], "velocity": [-6.0, 0.0]}}],
                  ego={"start": [0, 0], "velocity": [1.5, 0.0]}),
        _scenario("moto_recede", 105,
                  [{"class_id": "motorcycle", "extent": [2.1, 0.8],
                    "motion": {"start": [6.0, -0.5], "velocity": [5.0, 0.0]}}]),
        _scenario("two_peds", 106,
                  [_adult(7.0, -1.5, 0.0, 1.5), _adult(11.0, 1.5, 0.0, -1.2)]),
        _scenario("ped_diagonal", 107, [_adult(9.0, -1.5, 0.9, 1.1)]),
        _scenario("car_cross", 108,
                  [{"class_id": "car", "extent": [4.2, 1.8],
                    "motion": {"start": [12.0, -3.5], "velocity": [0.0, 3.0]}}]),
        _scenario("slow_walker_and_bike", 109,
                  [_adult(8.0, -0.5, 0.0, 0.4),
                   {"class_id": "bicycle", "extent": [1.8, 0.6],
                    "motion": {"start": [12.0, 2.5], "velocity": [0.0, -2.2]}}]),
        _scenario("wall_and_ped", 110,
                  [_adult(9.0, -1.8, 0.0, 1.5)],
                  walls=[{"start": [13.0, -7.0], "end": [13.0, 7.0]}],
                  clutter=1.0),
    ]


def benchmark_pipeline_config(scenario: ScenarioConfig, corrector: str,
                              seed: int = 0, out_dir=None) -> PipelineConfig:
    return PipelineConfig(
        scenario=scenario,
        grid_width=GRID_CELLS, grid_height=GRID_CELLS, resolution=RESOLUTION,
        filter=FilterParams(budget=4000, births_per_cell=8),
        oracle_noise=OracleNoise(miss_rate=0.2, confidence_alpha=8.0,
                                 confidence_beta=2.0),
        corrector=corrector,
        out_dir=Path(out_dir) if out_dir else None,
        seed=seed,
    )


@dataclass
class SuiteReport:
    baseline_grid: evalkit.GridMetrics
    hybrid_grid: evalkit.GridMetrics
    baseline_objects: evalkit.ApReport
    hybrid_objects: evalkit.ApReport
    per_scenario: dict

    def as_dict(self) -> dict:
        return {
            "baseline": {"grid": self.baseline_grid.as_dict(),
                         "objects": self.baseline_objects.as_dict()},
            "hybrid": {"grid": self.hybrid_grid.as_dict(),
                       "objects": self.hybrid_objects.as_dict()},
            "per_scenario": self.per_scenario,
        }


def run_benchmark(seed: int = 0, out_root=None, corrector: str = "oracle") -> SuiteReport:
    """A/B over the whole suite with metrics pooled across scenarios.

    Both arms are scored against box-corrected baseline grids, and object
    matching is pooled over every frame of every scenario.
    """
    base_counts = None
    hybrid_counts = None
    base_pairs = []
    hybrid_pairs = []
    per_scenario = {}
    ap_params = evalkit.ApParams(grid_extent=(GRID_CELLS * RESOLUTION,
                                              GRID_CELLS * RESOLUTION))
    for scenario in benchmark_scenarios():
        out_dir = Path(out_root) / scenario.name if out_root else None
        cfg = benchmark_pipeline_config(scenario, corrector, seed, out_dir)
        baseline = run_pipeline(replace(
            cfg, corrector="none",
            out_dir=out_dir / "baseline" if out_dir else None))
        hybrid = run_pipeline(replace(
            cfg, out_dir=out_dir / "hybrid" if out_dir else None))
        truth = label_truth_states(baseline)
        for run, counts_name in ((baseline, "base"), (hybrid, "hybrid")):
            counts = base_counts if counts_name == "base" else hybrid_counts
            for fr, t in zip(run.frames, truth):
                counts = evalkit.accumulate_confusion(fr.frame.states(), t, counts)
            if counts_name == "base":
                base_counts = counts
            else:
                hybrid_counts = counts
        base_pairs.extend(baseline.detection_pairs())
        hybrid_pairs.extend(hybrid.detection_pairs())
        per_scenario[scenario.name] = {
            "baseline_objects": len([o for fr in baseline.frames for o in fr.objects]),
            "hybrid_objects": len([o for fr in hybrid.frames for o in fr.objects]),
        }
    return SuiteReport(
        baseline_grid=evalkit.metrics_from_confusion(base_counts),
        hybrid_grid=evalkit.metrics_from_confusion(hybrid_counts),
        baseline_objects=evalkit.average_precision(base_pairs, ap_params),
        hybrid_objects=evalkit.average_precision(hybrid_pairs, ap_params),
        per_scenario=per_scenario,
    )
