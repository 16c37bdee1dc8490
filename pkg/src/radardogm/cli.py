"""Command-line entry point: ``dogm run <config>``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import evalkit, particles as pf
from .corrector import OracleNoise
from .errors import ConfigError, DogmError
from .fusion import FusionParams
from .ism import DEFAULT_FOV_FREE, IsmParams
from .pipeline import PipelineConfig, run_ab, run_pipeline, workers_from_env
from .simworld import load_scenario


def _params_from(cls, data: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field {sorted(unknown)[0]!r}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_pipeline_config(path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: no such config file") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    allowed = {"scenario", "grid", "ism", "filter", "fusion", "cluster",
               "oracle_noise", "corrector", "transition_decay", "out_dir",
               "render", "dump_particles", "seed", "frames"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown field {sorted(unknown)[0]!r}")
    if "scenario" not in data:
        raise ConfigError(f"{path}: missing field 'scenario'")
    scenario_path = Path(data["scenario"])
    if not scenario_path.is_absolute():
        scenario_path = Path(path).parent / scenario_path
    scenario = load_scenario(scenario_path)

    grid = data.get("grid", {})
    unknown = set(grid) - {"width_cells", "height_cells", "resolution"}
    if unknown:
        raise ConfigError(f"grid: unknown field {sorted(unknown)[0]!r}")
    ism_fields = dict(data.get("ism", {}))
    ism_fields.setdefault("m_free_fov", DEFAULT_FOV_FREE)
    if ism_fields["m_free_fov"] > 0:
        ism_fields.setdefault("fov", scenario.sensor.fov)
        ism_fields.setdefault("max_range", scenario.sensor.max_range)
    return PipelineConfig(
        scenario=scenario,
        grid_width=int(grid.get("width_cells", 500)),
        grid_height=int(grid.get("height_cells", 500)),
        resolution=float(grid.get("resolution", 0.2)),
        ism=_params_from(IsmParams, ism_fields, "ism"),
        filter=_params_from(pf.FilterParams, data.get("filter", {}), "filter"),
        fusion=_params_from(FusionParams, data.get("fusion", {}), "fusion"),
        cluster=_params_from(evalkit.ClusterParams, data.get("cluster", {}), "cluster"),
        oracle_noise=_params_from(OracleNoise, data.get("oracle_noise", {}),
                                  "oracle_noise"),
        corrector=str(data.get("corrector", "none")),
        transition_decay=float(data.get("transition_decay", 0.02)),
        out_dir=Path(data["out_dir"]) if data.get("out_dir") else None,
        render=bool(data.get("render", False)),
        dump_particles=bool(data.get("dump_particles", False)),
        seed=int(data.get("seed", 0)),
        frames=data.get("frames"),
        workers=workers_from_env(),
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dogm",
        description="Radar dynamic occupancy grid mapping pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run a pipeline config")
    run_p.add_argument("config", help="pipeline config JSON")
    run_p.add_argument("--ab", action="store_true",
                       help="also run a no-corrector baseline and write a comparison report")
    run_p.add_argument("--render", action="store_true", help="write PNG renders")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--corrector", default=None,
                       help="none | oracle | file:PATTERN")
    run_p.add_argument("--frames", type=int, default=None,
                       help="cap the number of processed frames")
    args = parser.parse_args(argv)

    try:
        config = load_pipeline_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.out is not None:
            config = replace(config, out_dir=Path(args.out))
        if args.corrector is not None:
            config = replace(config, corrector=args.corrector)
        if args.frames is not None:
            config = replace(config, frames=args.frames)
        if args.render:
            config = replace(config, render=True)
    except ConfigError as exc:
        print(f"dogm: config error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.ab:
            report = run_ab(config)
            hybrid = report.hybrid_objects.overall
            base = report.baseline_objects.overall
            print(f"[{report.scenario}] baseline AP={base.ap:.3f} R={base.recall:.3f} "
                  f"P={base.precision:.3f} | hybrid AP={hybrid.ap:.3f} "
                  f"R={hybrid.recall:.3f} P={hybrid.precision:.3f}")
        else:
            result = run_pipeline(config, keep_frames=False)
            n_objects = sum(len(fr.objects) for fr in result.frames)
            print(f"[{config.scenario.name}] {len(result.frames)} frames, "
                  f"{n_objects} object detections, "
                  f"{result.skipped_detections} out-of-grid detections skipped")
    except ConfigError as exc:
        print(f"dogm: config error: {exc}", file=sys.stderr)
        return 1
    except DogmError as exc:
        print(f"dogm: runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
