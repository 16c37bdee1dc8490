"""Synthetic 2D world and radar sensor model.

Generates deterministic radar scan sequences plus ground-truth boxes for
desk-scale end-to-end experiments: actors and wall segments are sampled
into surface points, occluded points are removed with an azimuth-bin
z-buffer, and the survivors become noisy detections with physically
consistent range rates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corrector import OBJECT_CLASSES, GtBox
from .errors import ConfigError
from .grid import Pose
from .ism import RadarDetection, RadarScan


@dataclass(frozen=True)
class Waypoint:
    t: float
    x: float
    y: float


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear motion: explicit waypoints or start + constant velocity."""

    waypoints: tuple[Waypoint, ...]
    yaw_hint: float = 0.0

    @classmethod
    def constant_velocity(cls, start, velocity, duration: float,
                          yaw_hint: float = 0.0) -> "Trajectory":
        end = (start[0] + velocity[0] * duration, start[1] + velocity[1] * duration)
        return cls((Waypoint(0.0, start[0], start[1]),
                    Waypoint(max(duration, 1e-9), end[0], end[1])), yaw_hint)

    def sample(self, t: float) -> tuple[np.ndarray, np.ndarray, float]:
        """Position, velocity, and heading at time t (clamped to the ends)."""
        wps = self.waypoints
        if t <= wps[0].t:
            seg = 0
        elif t >= wps[-1].t:
            seg = len(wps) - 2
        else:
            seg = max(i for i in range(len(wps) - 1) if wps[i].t <= t)
        a, b = wps[seg], wps[seg + 1]
        span = b.t - a.t
        frac = 0.0 if span <= 0 else min(max((t - a.t) / span, 0.0), 1.0)
        pos = np.array([a.x + frac * (b.x - a.x), a.y + frac * (b.y - a.y)])
        vel = np.array([(b.x - a.x) / span, (b.y - a.y) / span]) if span > 0 \
            else np.zeros(2)
        if t < wps[0].t or t > wps[-1].t:
            vel = np.zeros(2)
        speed = float(np.hypot(*vel))
        yaw = math.atan2(vel[1], vel[0]) if speed > 1e-9 else self.yaw_hint
        return pos, vel, yaw


@dataclass(frozen=True)
class ActorConfig:
    class_id: str
    extent: tuple[float, float]
    trajectory: Trajectory


@dataclass(frozen=True)
class WallConfig:
    start: tuple[float, float]
    end: tuple[float, float]


@dataclass(frozen=True)
class SensorConfig:
    fov: float = math.radians(120.0)
    max_range: float = 50.0
    sigma_range: float = 0.05
    sigma_azimuth: float = math.radians(0.2)
    sigma_range_rate: float = 0.05
    detections_per_actor_face: int = 3
    clutter_rate: float = 0.0
    detection_prob: float = 1.0
    mount: Pose = Pose(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ScenarioConfig:
    duration: float
    dt: float
    ego: Trajectory
    actors: tuple[ActorConfig, ...] = ()
    walls: tuple[WallConfig, ...] = ()
    sensor: SensorConfig = SensorConfig()
    seed: int = 0
    name: str = "scenario"

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.duration < self.dt:
            raise ConfigError("duration must cover at least one frame")
        if not 0.0 <= self.sensor.detection_prob <= 1.0:
            raise ConfigError("detection_prob must lie in [0, 1]")
        if self.sensor.clutter_rate < 0:
            raise ConfigError("clutter_rate must be non-negative")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass(frozen=True)
class GtFrame:
    timestamp: float
    boxes: tuple[GtBox, ...]
    ego_pose: Pose
    ego_velocity: tuple[float, float]


def _parse_trajectory(obj: dict, duration: float, where: str) -> Trajectory:
    allowed = {"start", "velocity", "waypoints", "yaw"}
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field {sorted(unknown)[0]!r}")
    yaw = float(obj.get("yaw", 0.0))
    if "waypoints" in obj:
        wps = tuple(Waypoint(float(w["t"]), float(w["pos"][0]), float(w["pos"][1]))
                    for w in obj["waypoints"])
        if len(wps) < 2:
            raise ConfigError(f"{where}: need at least two waypoints")
        times = [w.t for w in wps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError(f"{where}: waypoint times must be strictly increasing")
        return Trajectory(wps, yaw)
    start = obj.get("start", (0.0, 0.0))
    velocity = obj.get("velocity", (0.0, 0.0))
    return Trajectory.constant_velocity((float(start[0]), float(start[1])),
                                        (float(velocity[0]), float(velocity[1])),
                                        duration, yaw)


def _check_fields(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field {sorted(unknown)[0]!r}")


def scenario_from_dict(data: dict) -> ScenarioConfig:
    _check_fields(data, {"name", "duration", "dt", "seed", "ego", "actors",
                         "walls", "sensor"}, "scenario")
    for req in ("duration", "dt"):
        if req not in data:
            raise ConfigError(f"scenario: missing field {req!r}")
    duration = float(data["duration"])
    ego = _parse_trajectory(data.get("ego", {}), duration, "ego")

    actors = []
    for i, a in enumerate(data.get("actors", [])):
        _check_fields(a, {"class_id", "extent", "motion"}, f"actors[{i}]")
        class_id = a.get("class_id", "car")
        if class_id not in OBJECT_CLASSES:
            raise ConfigError(f"actors[{i}]: unknown class_id {class_id!r}")
        extent = a.get("extent", (4.5, 1.8))
        actors.append(ActorConfig(
            class_id=class_id,
            extent=(float(extent[0]), float(extent[1])),
            trajectory=_parse_trajectory(a.get("motion", {}), duration,
                                         f"actors[{i}].motion")))

    walls = []
    for i, wseg in enumerate(data.get("walls", [])):
        _check_fields(wseg, {"start", "end"}, f"walls[{i}]")
        walls.append(WallConfig(start=(float(wseg["start"][0]), float(wseg["start"][1])),
                                end=(float(wseg["end"][0]), float(wseg["end"][1]))))

    sensor_fields = data.get("sensor", {})
    _check_fields(sensor_fields, {"fov", "max_range", "sigma_range",
                                  "sigma_azimuth", "sigma_range_rate",
                                  "detections_per_actor_face", "clutter_rate",
                                  "detection_prob", "mount"}, "sensor")
    mount_fields = sensor_fields.get("mount", {})
    _check_fields(mount_fields, {"x", "y", "yaw"}, "sensor.mount")
    defaults = SensorConfig()
    sensor = SensorConfig(
        fov=float(sensor_fields.get("fov", defaults.fov)),
        max_range=float(sensor_fields.get("max_range", defaults.max_range)),
        sigma_range=float(sensor_fields.get("sigma_range", defaults.sigma_range)),
        sigma_azimuth=float(sensor_fields.get("sigma_azimuth", defaults.sigma_azimuth)),
        sigma_range_rate=float(sensor_fields.get("sigma_range_rate",
                                                 defaults.sigma_range_rate)),
        detections_per_actor_face=int(sensor_fields.get("detections_per_actor_face",
                                                        defaults.detections_per_actor_face)),
        clutter_rate=float(sensor_fields.get("clutter_rate", defaults.clutter_rate)),
        detection_prob=float(sensor_fields.get("detection_prob",
                                               defaults.detection_prob)),
        mount=Pose(float(mount_fields.get("x", 0.0)), float(mount_fields.get("y", 0.0)),
                   float(mount_fields.get("yaw", 0.0))))

    return ScenarioConfig(duration=duration, dt=float(data["dt"]), ego=ego,
                          actors=tuple(actors), walls=tuple(walls), sensor=sensor,
                          seed=int(data.get("seed", 0)),
                          name=str(data.get("name", "scenario")))


def load_scenario(path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(data)


def _actor_surface_points(center: np.ndarray, extent, yaw: float,
                          vel: np.ndarray, sensor_pos: np.ndarray,
                          per_face: int, rng: np.random.Generator):
    """Sample points on the actor faces whose outward normal faces the sensor."""
    c, s = math.cos(yaw), math.sin(yaw)
    axes = np.array([[c, s], [-s, c]])          # rows: local x/y in world
    half = (extent[0] / 2.0, extent[1] / 2.0)
    pts = []
    # faces: (normal axis, sign, tangent axis, tangent half-extent)
    for axis, sign, tangent, tan_half in ((0, 1, 1, half[1]), (0, -1, 1, half[1]),
                                          (1, 1, 0, half[0]), (1, -1, 0, half[0])):
        normal = sign * axes[axis]
        face_center = center + normal * half[axis]
        if np.dot(sensor_pos - face_center, normal) <= 0:
            continue
        offs = rng.uniform(-tan_half, tan_half, size=per_face)
        for off in offs:
            pts.append(face_center + off * axes[tangent])
    return [(p, vel) for p in pts]


def _wall_surface_points(wall: WallConfig, per_face: int,
                         rng: np.random.Generator):
    a = np.array(wall.start)
    b = np.array(wall.end)
    offs = rng.uniform(0.0, 1.0, size=per_face)
    return [(a + f * (b - a), np.zeros(2)) for f in offs]


def _actor_face_segments(center: np.ndarray, extent, yaw: float):
    c, s = math.cos(yaw), math.sin(yaw)
    axes = np.array([[c, s], [-s, c]])
    hx, hy = extent[0] / 2.0, extent[1] / 2.0
    corners = [center + sx * hx * axes[0] + sy * hy * axes[1]
               for sx, sy in ((1, 1), (1, -1), (-1, -1), (-1, 1))]
    return [(corners[i], corners[(i + 1) % 4]) for i in range(4)]


def _segment_zbuffer(segments, sensor_pos: np.ndarray, sensor_heading: float,
                     fov: float, max_range: float, bin_width: float) -> np.ndarray:
    """Nearest surface range per azimuth bin, from ray-segment intersections."""
    n_bins = max(int(math.ceil(fov / bin_width)), 1)
    az = (np.arange(n_bins) + 0.5) * bin_width - fov / 2.0 + sensor_heading
    dirs = np.stack([np.cos(az), np.sin(az)], axis=-1)
    zbuf = np.full(n_bins, max_range)
    for a, b in segments:
        e = np.asarray(b, float) - np.asarray(a, float)
        rel = np.asarray(a, float) - sensor_pos
        denom = dirs[:, 0] * e[1] - dirs[:, 1] * e[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (rel[0] * e[1] - rel[1] * e[0]) / denom
            t = (rel[0] * dirs[:, 1] - rel[1] * dirs[:, 0]) / denom
        hit = (np.abs(denom) > 1e-12) & (s > 1e-6) & (t >= 0.0) & (t <= 1.0)
        zbuf[hit] = np.minimum(zbuf[hit], s[hit])
    return zbuf


def _visible(points, occluders, sensor_pos: np.ndarray, sensor_heading: float,
             fov: float, max_range: float, bin_width: float):
    """Drop sampled points behind the per-bin nearest surface (angular z-buffer)."""
    zbuf = _segment_zbuffer(occluders, sensor_pos, sensor_heading, fov,
                            max_range, bin_width)
    n_bins = zbuf.shape[0]
    out = []
    for p, v in points:
        d = p - sensor_pos
        r = float(np.hypot(d[0], d[1]))
        az = math.atan2(d[1], d[0]) - sensor_heading
        az = math.atan2(math.sin(az), math.cos(az))
        if r > max_range or r < 1e-6 or abs(az) > fov / 2.0:
            continue
        b = min(int(math.floor((az + fov / 2.0) / bin_width)), n_bins - 1)
        if r <= zbuf[b] + 0.1:
            out.append((p, v, r, az))
    return out


def simulate(config: ScenarioConfig) -> list[tuple[RadarScan, GtFrame]]:
    """Run the scenario: one (scan, ground truth) pair per frame, fully seeded."""
    out = []
    sensor = config.sensor
    bin_width = max(sensor.sigma_azimuth, 1e-3)
    for k in range(config.n_frames):
        t = k * config.dt
        rng = np.random.default_rng([config.seed, k, 0x51])
        ego_pos, ego_vel, ego_yaw = config.ego.sample(t)
        ego_pose = Pose(float(ego_pos[0]), float(ego_pos[1]), ego_yaw)
        mount = sensor.mount
        cy, sy = math.cos(ego_yaw), math.sin(ego_yaw)
        sensor_pos = np.array([ego_pos[0] + cy * mount.x - sy * mount.y,
                               ego_pos[1] + sy * mount.x + cy * mount.y])
        sensor_heading = ego_yaw + mount.yaw

        points = []
        boxes = []
        occluders = []
        for actor in config.actors:
            pos, vel, yaw = actor.trajectory.sample(t)
            boxes.append(GtBox(center=(float(pos[0]), float(pos[1])),
                               extent=actor.extent, yaw=yaw,
                               speed=float(np.hypot(vel[0], vel[1])),
                               class_id=actor.class_id))
            points.extend(_actor_surface_points(
                pos, actor.extent, yaw, vel, sensor_pos,
                sensor.detections_per_actor_face, rng))
            occluders.extend(_actor_face_segments(pos, actor.extent, yaw))
        for wall in config.walls:
            points.extend(_wall_surface_points(
                wall, sensor.detections_per_actor_face, rng))
            occluders.append((np.array(wall.start), np.array(wall.end)))

        detections = []
        for p, v, r, az in _visible(points, occluders, sensor_pos, sensor_heading,
                                    sensor.fov, sensor.max_range, bin_width):
            if rng.random() >= sensor.detection_prob:
                continue
            los = (p - sensor_pos) / r
            rr = float(np.dot(v - ego_vel, los))
            detections.append(RadarDetection(
                range=max(r + rng.normal(0.0, sensor.sigma_range), 0.0)
                if sensor.sigma_range > 0 else r,
                azimuth=az + (rng.normal(0.0, sensor.sigma_azimuth)
                              if sensor.sigma_azimuth > 0 else 0.0),
                range_rate=rr + (rng.normal(0.0, sensor.sigma_range_rate)
                                 if sensor.sigma_range_rate > 0 else 0.0),
                snr_weight=1.0))

        n_clutter = int(rng.poisson(sensor.clutter_rate)) if sensor.clutter_rate > 0 else 0
        for _ in range(n_clutter):
            detections.append(RadarDetection(
                range=float(rng.uniform(0.5, sensor.max_range)),
                azimuth=float(rng.uniform(-sensor.fov / 2.0, sensor.fov / 2.0)),
                range_rate=float(rng.uniform(-2.0, 2.0)),
                snr_weight=1.0))

        scan = RadarScan(timestamp=t, sensor_pose=mount, ego_pose=ego_pose,
                         ego_velocity=(float(ego_vel[0]), float(ego_vel[1])),
                         detections=tuple(detections))
        out.append((scan, GtFrame(timestamp=t, boxes=tuple(boxes),
                                  ego_pose=ego_pose,
                                  ego_velocity=(float(ego_vel[0]), float(ego_vel[1])))))
    return out
