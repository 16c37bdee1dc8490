"""Particle filter estimating per-cell dynamics.

Particles are born only in dynamic cells, weighted by how well their
velocity reproduces the measured range rates, resampled systematically,
and propagated with a linear motion model.  The filter provides cell and
object velocities; it does not feed back into the grid's state beliefs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .grid import D, GridSpec, Pose
from .ism import MeasurementGrid, RadarScan, compensated_range_rate


@dataclass(frozen=True)
class FilterParams:
    budget: int = 20000                 # global population cap
    births_per_cell: int = 8
    v_max: float = 15.0                 # perpendicular birth-velocity bound (m/s)
    sigma_rr: float = 0.5               # range-rate likelihood std (m/s)
    persistence: float = 0.5            # weight factor for unmeasured cells
    rng_seed: int = 0
    r_assoc: float = 1.0                # particle-to-detection association radius (m)
    birth_assoc_radius: float = 2.0     # cell-to-detection association radius at birth (m)
    sigma_pos: float = 0.05             # process noise on position (m)
    sigma_vel: float = 0.3              # process noise on velocity (m/s)
    min_cell_particles: int = 3         # support needed for a cell velocity estimate
    per_cell_cap: int | None = None     # optional birth cap per cell population

    def __post_init__(self) -> None:
        if self.budget < self.births_per_cell:
            raise ValueError("budget must cover at least one cell's births")
        if min(self.sigma_rr, self.sigma_pos, self.sigma_vel) <= 0:
            raise ValueError("all process sigmas must be positive")


@dataclass(frozen=True, eq=False)
class ParticleSet:
    """Columnar particle storage: positions, velocities, weights, ages."""

    pos: np.ndarray      # (N, 2) world meters
    vel: np.ndarray      # (N, 2) world m/s
    weight: np.ndarray   # (N,)
    age: np.ndarray      # (N,) frames survived
    diverged: bool = False

    @classmethod
    def empty(cls) -> "ParticleSet":
        return cls(pos=np.zeros((0, 2)), vel=np.zeros((0, 2)),
                   weight=np.zeros(0), age=np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return self.pos.shape[0]

    def normalized(self) -> "ParticleSet":
        total = self.weight.sum()
        if len(self) == 0 or total <= 0:
            return self
        return replace(self, weight=self.weight / total)


def concatenate(a: ParticleSet, b: ParticleSet) -> ParticleSet:
    return ParticleSet(pos=np.concatenate([a.pos, b.pos]),
                       vel=np.concatenate([a.vel, b.vel]),
                       weight=np.concatenate([a.weight, b.weight]),
                       age=np.concatenate([a.age, b.age]),
                       diverged=a.diverged or b.diverged)


def _frame_rng(params: FilterParams, frame_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([params.rng_seed, frame_index, stream])


def spawn(frame, scan: RadarScan, params: FilterParams,
          current: ParticleSet, frame_index: int = 0) -> ParticleSet:
    """Particles born in the frame's dynamic cells.

    Birth velocity is radar-centric: the line-of-sight component reproduces
    the associated detection's compensated range rate, the perpendicular
    component is uniform in [-v_max, v_max].  Cells with no detection
    within ``birth_assoc_radius`` fall back to a fully uniform velocity.
    """
    spec: GridSpec = frame.spec
    states = frame.states()
    dyn_y, dyn_x = np.nonzero(states == D)
    if dyn_y.size == 0:
        return ParticleSet.empty()

    if params.per_cell_cap is not None and len(current) > 0:
        occupied = _cell_counts(current, spec, frame.ego_pose)
        keep = occupied[dyn_y, dyn_x] < params.per_cell_cap
        dyn_y, dyn_x = dyn_y[keep], dyn_x[keep]
        if dyn_y.size == 0:
            return ParticleSet.empty()

    rng = _frame_rng(params, frame_index, 0x5A)
    n_cells = dyn_y.size
    births = n_cells * params.births_per_cell
    room = params.budget - len(current)
    if room <= 0:
        return ParticleSet.empty()

    centers = spec.cell_center_world(dyn_x, dyn_y, frame.ego_pose)
    pos = np.repeat(centers, params.births_per_cell, axis=0)
    pos = pos + rng.uniform(-0.5, 0.5, size=pos.shape) * spec.resolution

    origin, heading = scan.sensor_world()
    det_points = scan.detection_points_world()
    vel = np.empty_like(pos)
    if det_points.shape[0] > 0:
        dists = np.linalg.norm(centers[:, None, :] - det_points[None, :, :], axis=-1)
        nearest = np.argmin(dists, axis=1)
        associated = dists[np.arange(n_cells), nearest] <= params.birth_assoc_radius
        rr_comp = np.array([compensated_range_rate(d, scan) for d in scan.detections])
        los = centers - origin
        norms = np.linalg.norm(los, axis=-1, keepdims=True)
        los = np.divide(los, norms, out=np.zeros_like(los), where=norms > 0)
        perp = np.stack([-los[:, 1], los[:, 0]], axis=-1)
        v_los = rr_comp[nearest][:, None] * los
        u_perp = rng.uniform(-params.v_max, params.v_max, size=(births,))
        cell_vel = np.repeat(v_los, params.births_per_cell, axis=0) \
            + u_perp[:, None] * np.repeat(perp, params.births_per_cell, axis=0)
        cell_assoc = np.repeat(associated, params.births_per_cell)
        vel[cell_assoc] = cell_vel[cell_assoc]
        fallback = ~cell_assoc
    else:
        fallback = np.ones(births, dtype=bool)
    if fallback.any():
        vel[fallback] = rng.uniform(-params.v_max, params.v_max,
                                    size=(int(fallback.sum()), 2))

    if births > room:
        pick = np.sort(rng.choice(births, size=room, replace=False))
        pos, vel = pos[pick], vel[pick]
        births = room
    weight = np.full(births, 1.0 / (len(current) + births))
    return ParticleSet(pos=pos, vel=vel, weight=weight,
                       age=np.zeros(births, dtype=np.int64))


def reweight(particles: ParticleSet, scan: RadarScan, mg: MeasurementGrid,
             params: FilterParams) -> ParticleSet:
    """Range-rate likelihood weighting scaled by the cell's occupancy evidence.

    Particles associated to a detection (nearest within ``r_assoc``) are
    weighted by a Gaussian on the range-rate residual; unassociated ones
    decay by the persistence factor.  Both are scaled by the measurement
    grid's occupied mass at the particle's cell, then globally normalized.
    If every weight underflows to zero the set resets to uniform and is
    flagged as diverged.
    """
    n = len(particles)
    if n == 0:
        return particles
    spec = mg.spec
    cells = spec.world_to_cell(particles.pos, mg.ego_pose)
    inb = spec.in_bounds(cells[:, 0], cells[:, 1])
    cx = np.clip(cells[:, 0], 0, spec.width_cells - 1)
    cy = np.clip(cells[:, 1], 0, spec.height_cells - 1)
    occ = mg.cells[cy, cx, 2] + mg.cells[cy, cx, 3]
    occ = np.where(inb, occ, 0.0)

    factor = np.full(n, params.persistence)
    det_points = scan.detection_points_world()
    if det_points.shape[0] > 0:
        origin, _ = scan.sensor_world()
        dists = np.linalg.norm(particles.pos[:, None, :] - det_points[None, :, :],
                               axis=-1)
        nearest = np.argmin(dists, axis=1)
        associated = dists[np.arange(n), nearest] <= params.r_assoc
        if associated.any():
            rr_meas = np.array([d.range_rate for d in scan.detections])[nearest]
            los = particles.pos - origin
            norms = np.linalg.norm(los, axis=-1, keepdims=True)
            los = np.divide(los, norms, out=np.zeros_like(los), where=norms > 0)
            v_rel = particles.vel - np.asarray(scan.ego_velocity)
            rr_pred = np.einsum("ij,ij->i", v_rel, los)
            residual = rr_meas - rr_pred
            gauss = np.exp(-0.5 * (residual / params.sigma_rr) ** 2)
            factor = np.where(associated, gauss, factor)

    weight = particles.weight * factor * occ
    total = weight.sum()
    if total <= 0.0:
        return replace(particles, weight=np.full(n, 1.0 / n), diverged=True)
    return replace(particles, weight=weight / total, diverged=False)


def resample(particles: ParticleSet, params: FilterParams,
             frame_index: int = 0) -> ParticleSet:
    """Systematic (low-variance) resampling to min(population, budget).

    One uniform draw plus evenly spaced offsets; survivors get weight 1/N
    and age + 1.  Every output particle is a copy of an input particle.
    """
    n = len(particles)
    if n == 0:
        return particles
    target = min(n, params.budget)
    rng = _frame_rng(params, frame_index, 0x7E)
    u0 = rng.random()
    positions = (np.arange(target) + u0) / target
    cumulative = np.cumsum(particles.weight)
    cumulative[-1] = 1.0
    idx = np.searchsorted(cumulative, positions, side="right")
    idx = np.minimum(idx, n - 1)
    return ParticleSet(pos=particles.pos[idx], vel=particles.vel[idx],
                       weight=np.full(target, 1.0 / target),
                       age=particles.age[idx] + 1,
                       diverged=particles.diverged)


def predict(particles: ParticleSet, dt: float, params: FilterParams,
            spec: GridSpec, ego_pose: Pose, frame_index: int = 0,
            noisy: bool = True) -> ParticleSet:
    """Linear constant-velocity prediction with Gaussian process noise.

    Particles that leave the grid extent are dropped.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    n = len(particles)
    if n == 0:
        return particles
    pos = particles.pos + particles.vel * dt
    vel = particles.vel
    if noisy:
        rng = _frame_rng(params, frame_index, 0x9D)
        pos = pos + rng.normal(0.0, params.sigma_pos, size=pos.shape)
        vel = vel + rng.normal(0.0, params.sigma_vel, size=vel.shape)
    cells = spec.world_to_cell(pos, ego_pose)
    keep = spec.in_bounds(cells[:, 0], cells[:, 1])
    kept = ParticleSet(pos=pos[keep], vel=vel[keep],
                       weight=particles.weight[keep],
                       age=particles.age[keep],
                       diverged=particles.diverged)
    return kept.normalized()


def _cell_counts(particles: ParticleSet, spec: GridSpec, ego_pose: Pose) -> np.ndarray:
    counts = np.zeros((spec.height_cells, spec.width_cells), dtype=np.int64)
    if len(particles) == 0:
        return counts
    cells = spec.world_to_cell(particles.pos, ego_pose)
    inb = spec.in_bounds(cells[:, 0], cells[:, 1])
    np.add.at(counts, (cells[inb, 1], cells[inb, 0]), 1)
    return counts


def cell_velocities(particles: ParticleSet, spec: GridSpec, ego_pose: Pose,
                    min_particles: int = 3) -> np.ndarray:
    """Weight-weighted mean velocity per cell, NaN below the support threshold."""
    h, w = spec.height_cells, spec.width_cells
    out = np.full((h, w, 2), np.nan)
    if len(particles) == 0:
        return out
    cells = spec.world_to_cell(particles.pos, ego_pose)
    inb = spec.in_bounds(cells[:, 0], cells[:, 1])
    cx, cy = cells[inb, 0], cells[inb, 1]
    wgt = particles.weight[inb]
    vel = particles.vel[inb]
    counts = np.zeros((h, w), dtype=np.int64)
    wsum = np.zeros((h, w))
    vsum = np.zeros((h, w, 2))
    np.add.at(counts, (cy, cx), 1)
    np.add.at(wsum, (cy, cx), wgt)
    np.add.at(vsum, (cy, cx), wgt[:, None] * vel)
    ok = (counts >= min_particles) & (wsum > 0)
    out[ok] = vsum[ok] / wsum[ok][:, None]
    return out
