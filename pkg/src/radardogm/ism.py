"""Radar-centric inverse sensor model.

Each detection deposits free evidence along the sensor ray and occupied
evidence in a Gaussian footprint around the measured point; the occupied
mass splits between static and dynamic from the ego-motion-compensated
range rate.  Evidence from multiple detections pools commutatively, so the
measurement grid does not depend on detection order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fusion
from .grid import BELIEF_FLOOR, D, F, N_STATES, S, U, GridSpec, Pose, normalize_beliefs


@dataclass(frozen=True)
class RadarDetection:
    """One radar return in the sensor frame (range rate > 0 = receding)."""

    range: float
    azimuth: float
    range_rate: float
    snr_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.range < 0:
            raise ValueError("range must be non-negative")
        if not 0.0 < self.snr_weight <= 1.0:
            raise ValueError("snr_weight must lie in (0, 1]")


@dataclass(frozen=True)
class RadarScan:
    """A radar frame: detections plus the poses needed to interpret them.

    ``sensor_pose`` is the mount pose in the ego frame; ``ego_pose`` and
    ``ego_velocity`` are world-frame.
    """

    timestamp: float
    sensor_pose: Pose
    ego_pose: Pose
    ego_velocity: tuple[float, float]
    detections: tuple[RadarDetection, ...]

    def sensor_world(self) -> tuple[np.ndarray, float]:
        """Sensor position and heading in the world frame."""
        c, s = math.cos(self.ego_pose.yaw), math.sin(self.ego_pose.yaw)
        pos = np.array([
            self.ego_pose.x + c * self.sensor_pose.x - s * self.sensor_pose.y,
            self.ego_pose.y + s * self.sensor_pose.x + c * self.sensor_pose.y,
        ])
        return pos, self.ego_pose.yaw + self.sensor_pose.yaw

    def detection_points_world(self) -> np.ndarray:
        """World positions of all detections, shape (N, 2)."""
        origin, heading = self.sensor_world()
        if not self.detections:
            return np.zeros((0, 2))
        rng = np.array([d.range for d in self.detections])
        az = np.array([d.azimuth for d in self.detections]) + heading
        return origin + np.stack([rng * np.cos(az), rng * np.sin(az)], axis=-1)


@dataclass(frozen=True)
class IsmParams:
    """Kernel shape and evidence weights of the inverse sensor model."""

    sigma_r: float = 0.4                       # occupied kernel std along range (m)
    sigma_az: float = math.radians(1.0)        # angular std; lateral std = sigma_az * range
    m_free: float = 0.45                       # free-evidence mixing weight per ray
    m_occ: float = 0.7                         # peak occupied evidence per detection
    v_sep: float = 0.5                         # static/dynamic range-rate separation (m/s)
    w_sep: float = 0.2                         # width of the logistic separation (m/s)
    kernel_cutoff: float = 3.0                 # truncate footprint at this many sigma
    m_free_fov: float = 0.0                    # visible-region free evidence (0 = off)
    fov: float | None = None                   # sensor envelope for the sweep
    max_range: float | None = None

    def __post_init__(self) -> None:
        if self.sigma_r <= 0 or self.sigma_az <= 0 or self.w_sep <= 0:
            raise ValueError("kernel sigmas and w_sep must be positive")
        if not (0 < self.m_free < 1 and 0 < self.m_occ < 1):
            raise ValueError("evidence weights must lie in (0, 1)")
        if self.v_sep <= 0 or self.kernel_cutoff <= 0:
            raise ValueError("v_sep and kernel_cutoff must be positive")
        if not 0.0 <= self.m_free_fov < 1.0:
            raise ValueError("m_free_fov must lie in [0, 1)")
        if self.m_free_fov > 0 and (self.fov is None or self.max_range is None):
            raise ValueError("the FOV sweep needs fov and max_range")


@dataclass(frozen=True, eq=False)
class MeasurementGrid:
    """Per-frame evidence grid (the likelihood of the Bayes update)."""

    spec: GridSpec
    cells: np.ndarray
    nearest_detection_distance: np.ndarray
    ego_pose: Pose
    timestamp: float
    skipped_detections: int = 0


def compensated_range_rate(detection: RadarDetection, scan: RadarScan) -> float:
    """Range rate with the ego's own radial velocity removed.

    Static world points read ~0 after compensation regardless of ego motion.
    """
    origin, heading = scan.sensor_world()
    az = detection.azimuth + heading
    los = np.array([math.cos(az), math.sin(az)])
    return detection.range_rate + float(np.dot(scan.ego_velocity, los))


def _bresenham(x0: int, y0: int, x1: int, y1: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer cells from (x0, y0) to (x1, y1) inclusive."""
    dx = abs(x1 - x0)
    dy = abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    n = max(dx, dy) + 1
    xs = np.empty(n, dtype=np.int64)
    ys = np.empty(n, dtype=np.int64)
    err = dx - dy
    x, y = x0, y0
    for i in range(n):
        xs[i] = x
        ys[i] = y
        if x == x1 and y == y1:
            return xs[:i + 1], ys[:i + 1]
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy
    return xs, ys


_SWEEP_BIN = math.radians(1.0)
_SWEEP_LOOKAROUND = 3          # occlusion lookup half-width, in sweep bins

DEFAULT_FOV_FREE = 0.25        # pipeline-level default for the FOV sweep


def _visible_region(scan: RadarScan, spec: GridSpec, params: IsmParams,
                    xs: np.ndarray, ys: np.ndarray, origin: np.ndarray,
                    heading: float) -> np.ndarray:
    """Cells the sensor can currently see: inside the FOV, within range, and
    not behind a detection in a nearby bearing bin."""
    half_fov = params.fov / 2.0
    n_bins = max(int(math.ceil(params.fov / _SWEEP_BIN)), 1)
    zbuf = np.full(n_bins, params.max_range)
    for det in scan.detections:
        if abs(det.azimuth) > half_fov:
            continue
        b = min(int((det.azimuth + half_fov) / _SWEEP_BIN), n_bins - 1)
        zbuf[b] = min(zbuf[b], det.range)
    blocked = zbuf.copy()
    for shift in range(1, _SWEEP_LOOKAROUND + 1):
        blocked[shift:] = np.minimum(blocked[shift:], zbuf[:-shift])
        blocked[:-shift] = np.minimum(blocked[:-shift], zbuf[shift:])
    margin = params.kernel_cutoff * params.sigma_r

    dx = xs - origin[0]
    dy = ys - origin[1]
    cell_range = np.hypot(dx, dy)
    bearing = np.arctan2(dy, dx) - heading
    bearing = np.arctan2(np.sin(bearing), np.cos(bearing))
    cell_bin = np.clip(((bearing + half_fov) / _SWEEP_BIN).astype(np.int64),
                       0, n_bins - 1)
    return ((np.abs(bearing) <= half_fov)
            & (cell_range <= params.max_range)
            & (cell_range <= blocked[cell_bin] - margin))


def build_measurement_grid(scan: RadarScan, spec: GridSpec,
                           params: IsmParams = IsmParams()) -> MeasurementGrid:
    """Turn one radar scan into a measurement grid.

    Untouched cells stay uniform so the Bayes update leaves the prior
    unchanged there.  Within one cell of a detection center, occupied
    evidence wins over crossing rays; elsewhere free and occupied evidence
    combine by independent opinion pooling.  Detections that fall outside
    the grid are skipped and tallied.
    """
    h, w = spec.height_cells, spec.width_cells
    free_keep = np.ones((h, w))             # prod(1 - free evidence)
    occ_keep = np.ones((h, w))              # prod(1 - occupied evidence)
    occ_dyn = np.zeros((h, w))
    occ_stat = np.zeros((h, w))
    near_center = np.zeros((h, w), dtype=bool)
    detection_mask = np.zeros((h, w), dtype=bool)
    skipped = 0

    origin, heading = scan.sensor_world()
    sensor_cell = spec.world_to_cell(origin, scan.ego_pose)
    xs, ys = spec.cell_centers(scan.ego_pose)
    cutoff_sq = params.kernel_cutoff ** 2

    for det in scan.detections:
        az = det.azimuth + heading
        los = np.array([math.cos(az), math.sin(az)])
        point = origin + det.range * los
        cx, cy = spec.world_to_cell(point, scan.ego_pose)
        if not spec.in_bounds(cx, cy):
            skipped += 1
            continue
        detection_mask[cy, cx] = True
        near_center[max(cy - 1, 0):cy + 2, max(cx - 1, 0):cx + 2] = True

        # Free evidence along the sensor ray, detection cell excluded.
        if spec.in_bounds(*sensor_cell):
            rx, ry = _bresenham(int(sensor_cell[0]), int(sensor_cell[1]),
                                int(cx), int(cy))
            rx, ry = rx[:-1], ry[:-1]
            free_keep[ry, rx] *= 1.0 - params.m_free * det.snr_weight

        # Occupied evidence in a truncated Gaussian footprint; the lateral
        # sigma never shrinks below one cell so sub-cell detection offsets
        # cannot gut the evidence at the detection's own cell.
        sigma_lat = max(params.sigma_az * det.range, spec.resolution)
        half_x = params.kernel_cutoff * max(params.sigma_r, sigma_lat)
        half_cells = int(math.ceil(half_x / spec.resolution)) + 1
        x0, x1 = max(cx - half_cells, 0), min(cx + half_cells + 1, w)
        y0, y1 = max(cy - half_cells, 0), min(cy + half_cells + 1, h)
        dx = xs[y0:y1, x0:x1] - point[0]
        dy = ys[y0:y1, x0:x1] - point[1]
        d_par = dx * los[0] + dy * los[1]
        d_lat = -dx * los[1] + dy * los[0]
        maha = (d_par / params.sigma_r) ** 2 + (d_lat / sigma_lat) ** 2
        inside = maha <= cutoff_sq
        if not inside.any():
            continue
        kernel = np.exp(-0.5 * maha[inside])
        occ = params.m_occ * det.snr_weight * kernel
        s_dyn = 1.0 / (1.0 + math.exp(
            -(abs(compensated_range_rate(det, scan)) - params.v_sep) / params.w_sep))
        block_keep = occ_keep[y0:y1, x0:x1]
        block_keep[inside] *= 1.0 - occ
        occ_dyn[y0:y1, x0:x1][inside] += occ * s_dyn
        occ_stat[y0:y1, x0:x1][inside] += occ * (1.0 - s_dyn)

    if params.m_free_fov > 0:
        visible = _visible_region(scan, spec, params, xs, ys, origin, heading)
        free_keep[visible] *= 1.0 - params.m_free_fov

    free_ev = 1.0 - free_keep
    free_ev[near_center] = 0.0
    occ_ev = 1.0 - occ_keep
    split_total = occ_dyn + occ_stat
    dyn_share = np.divide(occ_dyn, split_total,
                          out=np.full((h, w), 0.5), where=split_total > 0)

    residual = (1.0 - free_ev) * (1.0 - occ_ev)
    cells = np.empty((h, w, N_STATES))
    cells[..., U] = 0.25 * residual
    cells[..., F] = 0.25 * residual + free_ev * (1.0 - occ_ev)
    cells[..., S] = 0.25 * residual + occ_ev * (1.0 - dyn_share)
    cells[..., D] = 0.25 * residual + occ_ev * dyn_share

    return MeasurementGrid(
        spec=spec,
        cells=normalize_beliefs(cells),
        nearest_detection_distance=fusion.distance_field(detection_mask, spec),
        ego_pose=scan.ego_pose,
        timestamp=scan.timestamp,
        skipped_detections=skipped,
    )
