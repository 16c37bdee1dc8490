"""Binary codecs for grid snapshots and correction grids.

Grid snapshot (``frame_NNNNNN.dogm``): magic ``DOGM``, version u16,
width u32, height u32, resolution f32, ego pose 3xf64, timestamp f64,
then row-major cells of 4xf32 (U, F, S, D).  Correction grid
(``frame_NNNNNN.dogc``): magic ``DOGC``, version u16, width u32,
height u32, then row-major (state u8, confidence f32).  Little-endian
throughout.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .corrector import CorrectionGrid
from .errors import CodecError
from .grid import DogmFrame, GridSpec, N_STATES, Pose, normalize_beliefs
from .particles import ParticleSet

DOGM_MAGIC = b"DOGM"
DOGC_MAGIC = b"DOGC"
FORMAT_VERSION = 1

_DOGM_HEADER = struct.Struct("<4sHIIfdddd")
_DOGC_HEADER = struct.Struct("<4sHII")
_DOGC_CELL = np.dtype([("state", "<u1"), ("confidence", "<f4")])


def frame_filename(index: int, suffix: str = "dogm") -> str:
    return f"frame_{index:06d}.{suffix}"


def write_frame(frame: DogmFrame, path) -> None:
    spec = frame.spec
    header = _DOGM_HEADER.pack(DOGM_MAGIC, FORMAT_VERSION,
                               spec.width_cells, spec.height_cells,
                               spec.resolution,
                               frame.ego_pose.x, frame.ego_pose.y,
                               frame.ego_pose.yaw, frame.timestamp)
    cells = np.ascontiguousarray(frame.cells, dtype="<f4")
    Path(path).write_bytes(header + cells.tobytes())


def read_frame(path) -> DogmFrame:
    raw = Path(path).read_bytes()
    if len(raw) < _DOGM_HEADER.size:
        raise CodecError(f"{path}: truncated header at byte {len(raw)}")
    magic, version, width, height, resolution, ex, ey, eyaw, ts = \
        _DOGM_HEADER.unpack_from(raw)
    if magic != DOGM_MAGIC:
        raise CodecError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CodecError(f"{path}: unsupported version {version}")
    expected = _DOGM_HEADER.size + width * height * N_STATES * 4
    if len(raw) != expected:
        raise CodecError(f"{path}: truncated payload at byte {len(raw)}, "
                         f"expected {expected}")
    cells = np.frombuffer(raw, dtype="<f4", offset=_DOGM_HEADER.size)
    cells = cells.reshape(height, width, N_STATES).astype(float)
    ego = Pose(ex, ey, eyaw)
    # resolution travels as f32; recover the writer's value at 1e-6 m
    spec = GridSpec.centered(width, height, round(float(resolution), 6),
                             (ex, ey))
    return DogmFrame(spec=spec, cells=normalize_beliefs(cells),
                     ego_pose=ego, timestamp=ts)


def write_correction(corr: CorrectionGrid, path) -> None:
    spec = corr.spec
    header = _DOGC_HEADER.pack(DOGC_MAGIC, FORMAT_VERSION,
                               spec.width_cells, spec.height_cells)
    cells = np.empty(corr.states.size, dtype=_DOGC_CELL)
    cells["state"] = corr.states.ravel()
    cells["confidence"] = corr.confidence.ravel()
    Path(path).write_bytes(header + cells.tobytes())


def read_correction(path, expected_spec: GridSpec | None = None) -> CorrectionGrid:
    raw = Path(path).read_bytes()
    if len(raw) < _DOGC_HEADER.size:
        raise CodecError(f"{path}: truncated header at byte {len(raw)}")
    magic, version, width, height = _DOGC_HEADER.unpack_from(raw)
    if magic != DOGC_MAGIC:
        raise CodecError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CodecError(f"{path}: unsupported version {version}")
    expected = _DOGC_HEADER.size + width * height * _DOGC_CELL.itemsize
    if len(raw) != expected:
        raise CodecError(f"{path}: truncated payload at byte {len(raw)}, "
                         f"expected {expected}")
    cells = np.frombuffer(raw, dtype=_DOGC_CELL, offset=_DOGC_HEADER.size)
    states = cells["state"].reshape(height, width).copy()
    if states.max(initial=0) >= N_STATES:
        raise CodecError(f"{path}: state byte {int(states.max())} out of range")
    confidence = cells["confidence"].reshape(height, width).astype(float)
    if expected_spec is not None:
        if (width, height) != (expected_spec.width_cells, expected_spec.height_cells):
            raise CodecError(f"{path}: dimensions {width}x{height} do not match "
                             f"active grid {expected_spec.width_cells}x"
                             f"{expected_spec.height_cells}")
        spec = expected_spec
    else:
        spec = GridSpec.centered(width, height, 0.2, (0.0, 0.0))
    return CorrectionGrid(spec=spec, states=states, confidence=confidence)


def write_particles(particles: ParticleSet, path) -> None:
    """Diagnostic dump: one particle per line, ``x y vx vy w age``."""
    lines = []
    for i in range(len(particles)):
        lines.append("%.9g %.9g %.9g %.9g %.9g %d" % (
            particles.pos[i, 0], particles.pos[i, 1],
            particles.vel[i, 0], particles.vel[i, 1],
            particles.weight[i], particles.age[i]))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
