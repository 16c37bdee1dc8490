"""Per-cell state correction sources.

A corrector supplies, for every cell, a corrected state plus a confidence.
Three sources are provided: ground-truth labeling from 2D boxes (also used
to build evaluation targets), a stochastic oracle that degrades those
labels, and a file reader for externally produced correction grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import D, S, U, DogmFrame, GridSpec

OBJECT_CLASSES = ("car", "truck", "bicycle", "motorcycle", "adult")

STATIC_SPEED_THRESHOLD = 0.5


@dataclass(frozen=True)
class GtBox:
    """Axis-oriented ground-truth box projected onto the 2D plane."""

    center: tuple[float, float]
    extent: tuple[float, float]
    yaw: float
    speed: float
    class_id: str

    def __post_init__(self) -> None:
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ValueError("box extent must be positive")
        if self.speed < 0:
            raise ValueError("box speed must be non-negative")
        if self.class_id not in OBJECT_CLASSES:
            raise ValueError(f"unknown class {self.class_id!r}")

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Point-in-rotated-rectangle by inverse-yaw transform."""
        dx = np.asarray(x) - self.center[0]
        dy = np.asarray(y) - self.center[1]
        c, s = np.cos(-self.yaw), np.sin(-self.yaw)
        lx = c * dx - s * dy
        ly = s * dx + c * dy
        return (np.abs(lx) <= self.extent[0] / 2.0) & (np.abs(ly) <= self.extent[1] / 2.0)

    def distance_to(self, x: float, y: float) -> float:
        """Euclidean distance from a point to the box (0 inside)."""
        dx = x - self.center[0]
        dy = y - self.center[1]
        c, s = np.cos(-self.yaw), np.sin(-self.yaw)
        lx = abs(c * dx - s * dy) - self.extent[0] / 2.0
        ly = abs(s * dx + c * dy) - self.extent[1] / 2.0
        return float(np.hypot(max(lx, 0.0), max(ly, 0.0)))


@dataclass(frozen=True, eq=False)
class CorrectionGrid:
    """Per-cell corrected state (uint8) and confidence (float), same layout as the frame."""

    spec: GridSpec
    states: np.ndarray
    confidence: np.ndarray


@dataclass(frozen=True)
class OracleNoise:
    """Degradation model for the ground-truth oracle corrector."""

    miss_rate: float = 0.0
    state_flip_rate: float = 0.0
    confidence_alpha: float = 8.0
    confidence_beta: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.miss_rate < 1.0:
            raise ValueError("miss_rate must lie in [0, 1)")
        if not 0.0 <= self.state_flip_rate < 1.0:
            raise ValueError("state_flip_rate must lie in [0, 1)")
        if self.confidence_alpha <= 0 or self.confidence_beta <= 0:
            raise ValueError("Beta parameters must be positive")


def label_grid(frame: DogmFrame, boxes: list[GtBox],
               v_thresh: float = STATIC_SPEED_THRESHOLD) -> CorrectionGrid:
    """Ground-truth state labels from 2D boxes.

    Observed cells (winning state not unknown) whose centers fall inside a
    box become static or dynamic according to the box speed; unknown cells
    never change, and cells outside every box keep the frame's state.
    Confidence is 1 everywhere.
    """
    states = frame.states().copy()
    xs, ys = frame.spec.cell_centers(frame.ego_pose)
    observed = states != U
    for box in boxes:
        inside = box.contains(xs, ys) & observed
        states[inside] = S if box.speed < v_thresh else D
    confidence = np.ones_like(states, dtype=float)
    return CorrectionGrid(spec=frame.spec, states=states, confidence=confidence)


def oracle_corrector(frame: DogmFrame, boxes: list[GtBox],
                     noise: OracleNoise = OracleNoise(),
                     frame_index: int = 0,
                     v_thresh: float = STATIC_SPEED_THRESHOLD) -> CorrectionGrid:
    """Ground-truth labels degraded stochastically (desk-scale DNN stand-in).

    Each corrected cell is independently reverted to the frame's own state
    with ``miss_rate``; surviving corrections optionally flip S<->D with
    ``state_flip_rate`` and draw their confidence from Beta(alpha, beta).
    Uncorrected cells keep confidence 1.  Deterministic for a fixed seed
    and frame index.
    """
    labeled = label_grid(frame, boxes, v_thresh)
    frame_states = frame.states()
    states = labeled.states.copy()
    confidence = labeled.confidence.copy()
    corrected = states != frame_states
    n = int(corrected.sum())
    if n == 0:
        return CorrectionGrid(spec=frame.spec, states=states, confidence=confidence)
    rng = np.random.default_rng([noise.seed, frame_index, 0x0C])
    reverted = rng.random(n) < noise.miss_rate
    flipped = rng.random(n) < noise.state_flip_rate
    conf_draw = rng.beta(noise.confidence_alpha, noise.confidence_beta, size=n)

    cell_states = states[corrected]
    cell_states[reverted] = frame_states[corrected][reverted]
    flip = flipped & ~reverted & ((cell_states == S) | (cell_states == D))
    cell_states[flip] = np.where(cell_states[flip] == S, D, S)
    states[corrected] = cell_states

    cell_conf = confidence[corrected]
    cell_conf[~reverted] = conf_draw[~reverted]
    confidence[corrected] = cell_conf
    return CorrectionGrid(spec=frame.spec, states=states, confidence=confidence)


@dataclass
class FileCorrector:
    """Reads correction grids exported by an external model, one file per frame."""

    pattern: str
    missing: list[int] = field(default_factory=list)

    def __call__(self, frame: DogmFrame, frame_index: int) -> CorrectionGrid | None:
        from .gridio import read_correction

        path = Path(self.pattern % frame_index if "%" in self.pattern
                    else self.pattern.format(frame_index))
        if not path.exists():
            self.missing.append(frame_index)
            return None
        return read_correction(path, expected_spec=frame.spec)
