"""Pipeline orchestration: scenario -> grids, particles, objects, metrics.

Per-frame step order: realign, measurement grid, Bayes update, corrector,
fusion, particle birth/reweight/resample/predict, state transition, cell
velocities, object extraction.  Extracted objects carry the post-predict
timestamp (one dt ahead of the scan), and evaluation aligns them to ground
truth by timestamp.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import corrector as corr_mod
from . import evalkit, gridio, particles as pf
from .corrector import FileCorrector, OracleNoise
from .errors import ConfigError
from .fusion import FusionParams, fuse_grid
from .grid import (D, DogmFrame, GridSpec, Pose, apply_transition,
                   bayes_update, default_transition_matrix, realign)
from .ism import DEFAULT_FOV_FREE, IsmParams, build_measurement_grid
from .simworld import GtFrame, ScenarioConfig, simulate

STATE_PALETTE = ((0x00, 0x00, 0x00),   # unknown
                 (0x40, 0x40, 0x40),   # free
                 (0xA0, 0xA0, 0xA0),   # static
                 (0xFF, 0xFF, 0xFF))   # dynamic


@dataclass(frozen=True)
class PipelineConfig:
    scenario: ScenarioConfig
    grid_width: int = 500
    grid_height: int = 500
    resolution: float = 0.2
    ism: IsmParams | None = None      # None: defaults + FOV sweep from the sensor
    filter: pf.FilterParams = pf.FilterParams()
    fusion: FusionParams = FusionParams()
    cluster: evalkit.ClusterParams = evalkit.ClusterParams()
    oracle_noise: OracleNoise = OracleNoise()
    corrector: str = "none"                  # none | oracle | file:PATTERN
    transition_decay: float = 0.02
    out_dir: Path | None = None
    render: bool = False
    dump_particles: bool = False
    seed: int = 0
    frames: int | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.corrector not in ("none", "oracle") \
                and not self.corrector.startswith("file:"):
            raise ConfigError(f"unknown corrector {self.corrector!r}")
        if self.workers < 1:
            raise ConfigError("worker count must be at least 1")


@dataclass
class FrameResult:
    index: int
    frame: DogmFrame
    gt: GtFrame
    objects: list
    objects_timestamp: float
    diverged: bool
    step_ms: dict


@dataclass
class RunResult:
    config: PipelineConfig
    frames: list[FrameResult] = field(default_factory=list)
    skipped_detections: int = 0

    def detection_pairs(self):
        """(objects, GtFrame) pairs aligned by timestamp for evaluation."""
        by_time = {round(fr.gt.timestamp, 9): fr.gt for fr in self.frames}
        pairs = []
        for fr in self.frames:
            gt = by_time.get(round(fr.objects_timestamp, 9))
            if gt is not None:
                pairs.append((fr.objects, gt))
        return pairs


def workers_from_env() -> int:
    raw = os.environ.get("DOGM_THREADS", "1")
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"DOGM_THREADS must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ConfigError("DOGM_THREADS must be at least 1")
    return value


def _make_corrector(config: PipelineConfig):
    if config.corrector == "none":
        return None
    if config.corrector == "oracle":
        noise = replace(config.oracle_noise, seed=config.oracle_noise.seed + config.seed)

        def oracle(frame: DogmFrame, gt: GtFrame, index: int):
            return corr_mod.oracle_corrector(frame, list(gt.boxes), noise, index)

        return oracle
    file_source = FileCorrector(pattern=config.corrector[len("file:"):])

    def from_file(frame: DogmFrame, gt: GtFrame, index: int):
        return file_source(frame, index)

    return from_file


def run_pipeline(config: PipelineConfig, keep_frames: bool = True) -> RunResult:
    """Run one scenario through the full per-frame loop, writing artifacts."""
    scenario = config.scenario
    sequence = simulate(scenario)
    if config.frames is not None:
        sequence = sequence[:config.frames]
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        objects_file = (out_dir / "objects.jsonl").open("w")
        trace_file = (out_dir / "trace.jsonl").open("w")
    else:
        objects_file = trace_file = None

    ism_params = config.ism
    if ism_params is None:
        ism_params = IsmParams(m_free_fov=DEFAULT_FOV_FREE,
                               fov=scenario.sensor.fov,
                               max_range=scenario.sensor.max_range)
    filter_params = replace(config.filter, rng_seed=config.filter.rng_seed + config.seed)
    transition = default_transition_matrix(config.transition_decay)
    correct = _make_corrector(config)
    result = RunResult(config=config)

    first_pose = sequence[0][0].ego_pose if sequence else Pose(0.0, 0.0)
    spec = GridSpec.centered(config.grid_width, config.grid_height,
                             config.resolution, (first_pose.x, first_pose.y))
    prior = DogmFrame.initial(spec, first_pose)
    particles = pf.ParticleSet.empty()

    for k, (scan, gt) in enumerate(sequence):
        timings = {}
        tick = time.perf_counter

        t0 = tick()
        frame = realign(prior, scan.ego_pose)
        timings["realign"] = tick() - t0

        t0 = tick()
        mg = build_measurement_grid(scan, frame.spec, ism_params)
        result.skipped_detections += mg.skipped_detections
        timings["ism"] = tick() - t0

        t0 = tick()
        frame = bayes_update(frame, mg)
        timings["bayes"] = tick() - t0

        t0 = tick()
        if correct is not None:
            correction = correct(frame, gt, k)
            if correction is not None:
                frame = fuse_grid(frame, correction,
                                  mg.nearest_detection_distance, config.fusion)
        else:
            correction = None
        timings["fusion"] = tick() - t0

        t0 = tick()
        births = pf.spawn(frame, scan, filter_params, particles, k)
        particles = pf.concatenate(particles, births)
        particles = pf.reweight(particles, scan, mg, filter_params)
        diverged = particles.diverged
        particles = pf.resample(particles, filter_params, k)
        particles = pf.predict(particles, scenario.dt, filter_params,
                               frame.spec, frame.ego_pose, k)
        timings["particles"] = tick() - t0

        t0 = tick()
        prior = apply_transition(frame, transition)
        timings["transition"] = tick() - t0

        t0 = tick()
        velocity = pf.cell_velocities(particles, frame.spec, frame.ego_pose,
                                      filter_params.min_cell_particles)
        velocity[frame.states() != D] = np.nan
        frame = replace(frame, velocity=velocity)
        objects = evalkit.extract_objects(particles, config.cluster)
        objects_timestamp = scan.timestamp + scenario.dt
        timings["objects"] = tick() - t0

        if out_dir:
            gridio.write_frame(frame, out_dir / gridio.frame_filename(k))
            if correction is not None and config.corrector == "oracle":
                gridio.write_correction(correction,
                                        out_dir / gridio.frame_filename(k, "dogc"))
            if config.render:
                render_frame(frame, out_dir / f"frame_{k:06d}.png")
            if config.dump_particles:
                gridio.write_particles(particles, out_dir / f"particles_{k:06d}.txt")
            objects_file.write(json.dumps({
                "frame": k, "timestamp": round(objects_timestamp, 9),
                "objects": [{
                    "centroid": list(o.centroid), "velocity": list(o.velocity),
                    "confidence": o.confidence, "particle_count": o.particle_count,
                } for o in objects]}) + "\n")
            trace_file.write(json.dumps(
                {"frame": k, "ms": {s: round(v * 1e3, 3) for s, v in timings.items()}})
                + "\n")

        result.frames.append(FrameResult(
            index=k, frame=frame if keep_frames else None, gt=gt,
            objects=objects, objects_timestamp=objects_timestamp,
            diverged=diverged, step_ms={s: v * 1e3 for s, v in timings.items()}))

    if out_dir:
        objects_file.close()
        trace_file.close()
    return result


def render_frame(frame: DogmFrame, path, draw_velocity: bool = False) -> None:
    """One pixel per cell, winning-state palette, world y axis pointing up."""
    states = frame.states()
    palette = np.array(STATE_PALETTE, dtype=np.uint8)
    rgb = palette[states][::-1]          # flip rows so +y is up in the image
    image = Image.fromarray(rgb, mode="RGB")
    if draw_velocity and frame.velocity is not None:
        drawer = ImageDraw.Draw(image)
        h = frame.spec.height_cells
        ys, xs = np.nonzero(~np.isnan(frame.velocity[..., 0]))
        for y, x in zip(ys[::3], xs[::3]):
            vx, vy = frame.velocity[y, x]
            drawer.line([(x, h - 1 - y),
                         (x + vx / frame.spec.resolution * 0.2,
                          h - 1 - y - vy / frame.spec.resolution * 0.2)],
                        fill=(255, 64, 64))
    image.save(path)


def sequence_grid_metrics(run: RunResult, truth_frames: list[np.ndarray]) -> evalkit.GridMetrics:
    """Grid metrics accumulated over all frames against per-frame truth states."""
    counts = None
    for fr, truth in zip(run.frames, truth_frames):
        counts = evalkit.accumulate_confusion(fr.frame.states(), truth, counts)
    return evalkit.metrics_from_confusion(counts)


def label_truth_states(run: RunResult) -> list[np.ndarray]:
    """Ground-truth state grids: box-corrected states of each run frame."""
    return [corr_mod.label_grid(fr.frame, list(fr.gt.boxes)).states
            for fr in run.frames]


@dataclass
class AbReport:
    scenario: str
    baseline_grid: evalkit.GridMetrics
    hybrid_grid: evalkit.GridMetrics
    baseline_objects: evalkit.ApReport
    hybrid_objects: evalkit.ApReport

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "baseline": {"grid": self.baseline_grid.as_dict(),
                         "objects": self.baseline_objects.as_dict()},
            "hybrid": {"grid": self.hybrid_grid.as_dict(),
                       "objects": self.hybrid_objects.as_dict()},
        }


def run_ab(config: PipelineConfig, ap_params: evalkit.ApParams | None = None) -> AbReport:
    """Baseline (no corrector) vs configured corrector on the same scenario.

    Both runs are scored against the baseline run's box-corrected grids,
    mirroring how a corrected conventional grid serves as ground truth.
    """
    if config.corrector == "none":
        raise ConfigError("--ab needs a corrector other than 'none'")
    base_dir = Path(config.out_dir) if config.out_dir else None
    baseline_cfg = replace(config, corrector="none",
                           out_dir=base_dir / "baseline" if base_dir else None)
    hybrid_cfg = replace(config,
                         out_dir=base_dir / "hybrid" if base_dir else None)
    baseline = run_pipeline(baseline_cfg)
    hybrid = run_pipeline(hybrid_cfg)

    truth = label_truth_states(baseline)
    if ap_params is None:
        extent = (config.grid_width * config.resolution,
                  config.grid_height * config.resolution)
        ap_params = evalkit.ApParams(grid_extent=extent)
    report = AbReport(
        scenario=config.scenario.name,
        baseline_grid=sequence_grid_metrics(baseline, truth),
        hybrid_grid=sequence_grid_metrics(hybrid, truth),
        baseline_objects=evalkit.average_precision(baseline.detection_pairs(), ap_params),
        hybrid_objects=evalkit.average_precision(hybrid.detection_pairs(), ap_params),
    )
    if base_dir:
        (base_dir / "report.json").write_text(json.dumps(report.as_dict(), indent=2))
        _write_pr_curves(base_dir / "pr_curves.csv", hybrid, ap_params)
    return report


def _write_pr_curves(path: Path, run: RunResult, ap_params: evalkit.ApParams) -> None:
    rows = ["threshold,recall,precision"]
    pairs = run.detection_pairs()
    for thr in ap_params.thresholds:
        flags, _tp, n_gt = evalkit.evaluate_threshold(pairs, thr, ap_params)
        for r, p in evalkit._pr_curve(flags, n_gt):
            rows.append(f"{thr},{r:.6f},{p:.6f}")
    Path(path).write_text("\n".join(rows) + "\n")
