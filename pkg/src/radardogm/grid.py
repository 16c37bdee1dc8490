"""Grid geometry, four-state cell beliefs, and the Bayesian update cycle.

Every cell carries a categorical distribution over {unknown, free, static,
dynamic}.  The same representation serves as measurement evidence
(likelihood) and as the running map estimate (prior/posterior).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import GridMismatchError

U, F, S, D = 0, 1, 2, 3
N_STATES = 4
STATE_NAMES = ("unknown", "free", "static", "dynamic")

# Numerical floor keeping every state away from absorbing zeros in the
# multiplicative Bayes update.
BELIEF_FLOOR = 1e-4

DEFAULT_DECAY = 0.02


@dataclass(frozen=True)
class Pose:
    """2D pose (position in meters, yaw in radians)."""

    x: float
    y: float
    yaw: float = 0.0

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class GridSpec:
    """Geometry of an ego-centered, world-axis-aligned belief grid.

    ``origin_offset`` is the world-frame offset from the ego position to
    the corner of cell (0, 0).  Grid origins are snapped to the world
    ``resolution`` lattice, so realignment between any two ego poses is
    always a whole-cell shift and the ego-centering error stays below
    ``resolution / 2`` per axis without ever accumulating.
    """

    width_cells: int
    height_cells: int
    resolution: float
    origin_offset: tuple[float, float]

    def __post_init__(self) -> None:
        if self.width_cells <= 0 or self.height_cells <= 0:
            raise ValueError("grid dimensions must be positive")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @classmethod
    def centered(cls, width_cells: int = 500, height_cells: int = 500,
                 resolution: float = 0.2, ego_xy=(0.0, 0.0)) -> "GridSpec":
        """Spec for a grid centered on ``ego_xy``, origin snapped to the lattice."""
        res = float(resolution)
        nominal = (ego_xy[0] - width_cells * res / 2.0,
                   ego_xy[1] - height_cells * res / 2.0)
        ox = math.floor(nominal[0] / res + 0.5) * res
        oy = math.floor(nominal[1] / res + 0.5) * res
        return cls(width_cells, height_cells, res,
                   (ox - ego_xy[0], oy - ego_xy[1]))

    @property
    def extent(self) -> tuple[float, float]:
        return (self.width_cells * self.resolution,
                self.height_cells * self.resolution)

    def origin_world(self, ego_pose: Pose) -> np.ndarray:
        """World position of the corner of cell (0, 0)."""
        return np.array([ego_pose.x + self.origin_offset[0],
                         ego_pose.y + self.origin_offset[1]])

    def world_to_cell(self, points: np.ndarray, ego_pose: Pose) -> np.ndarray:
        """Map world points (..., 2) to integer cell indices (..., 2) as (ix, iy)."""
        origin = self.origin_world(ego_pose)
        return np.floor((np.asarray(points, dtype=float) - origin)
                        / self.resolution).astype(np.int64)

    def cell_center_world(self, ix, iy, ego_pose: Pose) -> np.ndarray:
        origin = self.origin_world(ego_pose)
        return np.stack([origin[0] + (np.asarray(ix) + 0.5) * self.resolution,
                         origin[1] + (np.asarray(iy) + 0.5) * self.resolution],
                        axis=-1)

    def cell_centers(self, ego_pose: Pose) -> tuple[np.ndarray, np.ndarray]:
        """World x/y coordinates of all cell centers as (H, W) arrays."""
        origin = self.origin_world(ego_pose)
        xs = origin[0] + (np.arange(self.width_cells) + 0.5) * self.resolution
        ys = origin[1] + (np.arange(self.height_cells) + 0.5) * self.resolution
        return np.broadcast_to(xs, (self.height_cells, self.width_cells)), \
            np.broadcast_to(ys[:, None], (self.height_cells, self.width_cells))

    def in_bounds(self, ix, iy) -> np.ndarray:
        return ((np.asarray(ix) >= 0) & (np.asarray(ix) < self.width_cells)
                & (np.asarray(iy) >= 0) & (np.asarray(iy) < self.height_cells))


def one_hot_belief(state: int) -> np.ndarray:
    """Floored one-hot distribution: mass 1 - 3*floor on ``state``."""
    b = np.full(N_STATES, BELIEF_FLOOR)
    b[state] = 1.0 - 3 * BELIEF_FLOOR
    return b


def unknown_cells(height: int, width: int) -> np.ndarray:
    cells = np.empty((height, width, N_STATES), dtype=float)
    cells[:] = one_hot_belief(U)
    return cells


def normalize_beliefs(cells: np.ndarray) -> np.ndarray:
    """Project onto valid beliefs: sum 1 with every component >= the floor.

    Components that would fall below the floor are pinned to it and the
    remaining mass is rescaled (at most three passes for four states).
    Valid inputs pass through unchanged up to round-off.
    """
    b = np.asarray(cells, dtype=float)
    b = b / b.sum(axis=-1, keepdims=True)
    low = b < BELIEF_FLOOR
    if not low.any():
        return b
    while True:
        n_low = low.sum(axis=-1, keepdims=True)
        high_sum = np.where(low, 0.0, b).sum(axis=-1, keepdims=True)
        scaled = b * (1.0 - n_low * BELIEF_FLOOR) / high_sum
        new_low = low | (scaled < BELIEF_FLOOR)
        if np.array_equal(new_low, low):
            return np.where(low, BELIEF_FLOOR, scaled)
        low = new_low


def argmax_states(cells: np.ndarray) -> np.ndarray:
    """Per-cell winning state; ties resolve to the lowest state index."""
    return np.argmax(cells, axis=-1).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class DogmFrame:
    """One time step of the dynamic occupancy grid.

    ``cells`` is (H, W, 4) with states ordered (U, F, S, D).  ``velocity``
    is (H, W, 2) in m/s with NaN where no estimate exists; estimates are
    only kept for cells whose winning state is dynamic.
    """

    spec: GridSpec
    cells: np.ndarray
    ego_pose: Pose
    timestamp: float
    velocity: np.ndarray | None = None

    @classmethod
    def initial(cls, spec: GridSpec, ego_pose: Pose,
                timestamp: float = 0.0) -> "DogmFrame":
        return cls(spec=spec,
                   cells=unknown_cells(spec.height_cells, spec.width_cells),
                   ego_pose=ego_pose, timestamp=timestamp)

    def states(self) -> np.ndarray:
        return argmax_states(self.cells)


def bayes_update(prior: DogmFrame, mg) -> DogmFrame:
    """Multiplicative Bayes update: posterior ∝ measurement * prior, per state.

    The normalizer is the per-cell sum of the products; a uniform
    measurement cell therefore leaves the prior untouched.
    """
    if prior.spec != mg.spec:
        raise GridMismatchError(
            f"prior spec {prior.spec} != measurement spec {mg.spec}")
    if prior.ego_pose != mg.ego_pose:
        raise GridMismatchError("prior and measurement grids are not ego-aligned")
    product = mg.cells * prior.cells
    denom = product.sum(axis=-1, keepdims=True)
    if np.any(denom < 1e-12):
        raise FloatingPointError("Bayes normalizer underflow; beliefs not floored?")
    return replace(prior, cells=normalize_beliefs(product / denom),
                   timestamp=mg.timestamp, velocity=None)


def default_transition_matrix(decay: float = DEFAULT_DECAY) -> np.ndarray:
    """Row-stochastic state transition: each state leaks ``decay`` to unknown."""
    t = np.eye(N_STATES) * (1.0 - decay)
    t[:, U] += decay
    t[U, U] = 1.0
    t[U, 1:] = 0.0
    return t


def apply_transition(frame: DogmFrame, transition: np.ndarray) -> DogmFrame:
    """Apply a 4x4 row-stochastic transition to every cell belief."""
    transition = np.asarray(transition, dtype=float)
    if transition.shape != (N_STATES, N_STATES):
        raise ValueError("transition matrix must be 4x4")
    if np.any(transition < 0) or np.any(
            np.abs(transition.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("transition matrix must be row-stochastic")
    return replace(frame, cells=normalize_beliefs(frame.cells @ transition),
                   velocity=None)


def realign(frame: DogmFrame, new_ego_pose: Pose) -> DogmFrame:
    """Shift grid contents so the grid stays centered on the new ego pose.

    The grid is world-axis-aligned; ego yaw only affects sensor geometry,
    never the grid axes.  Because origins live on the resolution lattice,
    the shift is exact (whole cells) and newly exposed cells are unknown.
    """
    if not (math.isfinite(new_ego_pose.x) and math.isfinite(new_ego_pose.y)):
        raise ValueError("ego pose must be finite")
    spec = frame.spec
    new_spec = GridSpec.centered(spec.width_cells, spec.height_cells,
                                 spec.resolution,
                                 (new_ego_pose.x, new_ego_pose.y))
    old_origin = spec.origin_world(frame.ego_pose)
    new_origin = new_spec.origin_world(new_ego_pose)
    shift = (new_origin - old_origin) / spec.resolution
    sx, sy = int(round(shift[0])), int(round(shift[1]))

    cells = unknown_cells(spec.height_cells, spec.width_cells)
    h, w = spec.height_cells, spec.width_cells
    # new cell (ix, iy) covers the world area of old cell (ix + sx, iy + sy)
    src_x0, src_x1 = max(0, sx), min(w, w + sx)
    src_y0, src_y1 = max(0, sy), min(h, h + sy)
    if src_x0 < src_x1 and src_y0 < src_y1:
        dst_x0, dst_y0 = src_x0 - sx, src_y0 - sy
        cells[dst_y0:dst_y0 + (src_y1 - src_y0),
              dst_x0:dst_x0 + (src_x1 - src_x0)] = \
            frame.cells[src_y0:src_y1, src_x0:src_x1]
    return DogmFrame(spec=new_spec, cells=cells, ego_pose=new_ego_pose,
                     timestamp=frame.timestamp, velocity=None)
