"""Heuristic fusion of corrector output into the conventional grid.

The rule table is safety-first: unknown cells never change, occupancy found
by the conventional grid is never deleted, occupancy is only added over
free space when a radar measurement lies within ``d_min``, and occupied
cells are only reclassified when the corrector confidence exceeds
``c_min`` (strictly).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .corrector import CorrectionGrid
from .errors import GridMismatchError
from .grid import BELIEF_FLOOR, D, F, N_STATES, S, U, DogmFrame, GridSpec

try:
    from numba import njit as _njit
except ImportError:                      # pragma: no cover - numba optional
    _njit = None


@dataclass(frozen=True)
class FusionParams:
    d_min: float = 0.5
    c_min: float = 0.5

    def __post_init__(self) -> None:
        if self.d_min < 0:
            raise ValueError("d_min must be non-negative")
        if not 0.0 < self.c_min < 1.0:
            raise ValueError("c_min must lie in (0, 1)")


@dataclass(frozen=True)
class CorrectionCell:
    state: int
    confidence: float


def _envelope_1d(f: np.ndarray) -> np.ndarray:
    """1D squared-distance transform via the lower envelope of parabolas.

    Each input sample i contributes the parabola f[i] + (q - i)^2; the
    output at q is the pointwise minimum over all of them.
    """
    n = f.shape[0]
    d = np.full(n, np.inf)
    finite = np.nonzero(np.isfinite(f))[0]
    if finite.size == 0:
        return d
    v = np.empty(n, dtype=np.int64)      # sites of the envelope parabolas
    z = np.empty(n + 1)                  # boundaries between parabolas
    k = 0
    v[0] = finite[0]
    z[0] = -np.inf
    z[1] = np.inf
    for q in finite[1:]:
        s = _intersect(f, q, v[k])
        while s <= z[k]:
            k -= 1
            s = _intersect(f, q, v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def _intersect(f: np.ndarray, q: int, p: int) -> float:
    return ((f[q] + q * q) - (f[p] + p * p)) / (2 * q - 2 * p)


def _envelope_rows_py(colsq: np.ndarray, out: np.ndarray) -> None:
    for i in range(colsq.shape[0]):
        out[i] = _envelope_1d(colsq[i])


def _make_envelope_rows_jit():
    if _njit is None:
        return None

    @_njit(cache=True)
    def _rows(colsq, out):               # pragma: no cover - mirrors _envelope_1d
        h, w = colsq.shape
        v = np.empty(w, np.int64)
        z = np.empty(w + 1, np.float64)
        for i in range(h):
            f = colsq[i]
            first = -1
            for q in range(w):
                if np.isfinite(f[q]):
                    first = q
                    break
            if first < 0:
                for q in range(w):
                    out[i, q] = np.inf
                continue
            k = 0
            v[0] = first
            z[0] = -np.inf
            z[1] = np.inf
            for q in range(first + 1, w):
                fq = f[q]
                if not np.isfinite(fq):
                    continue
                s = ((fq + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
                while s <= z[k]:
                    k -= 1
                    s = ((fq + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
                k += 1
                v[k] = q
                z[k] = s
                z[k + 1] = np.inf
            k = 0
            for q in range(w):
                while z[k + 1] < q:
                    k += 1
                out[i, q] = (q - v[k]) ** 2 + f[v[k]]

    return _rows


_envelope_rows_jit = _make_envelope_rows_jit()


def distance_field(detection_cells: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Exact Euclidean distance (meters) to the nearest detection cell center.

    Separable exact transform: a vectorized two-way column sweep gives the
    per-column distance to the nearest marked cell, then a lower-envelope
    pass along each row turns those into exact 2D squared distances.
    An all-false mask yields +inf everywhere.
    """
    mask = np.asarray(detection_cells, dtype=bool)
    if mask.size == 0:
        raise ValueError("grid must be nonempty")
    h, w = mask.shape
    if not mask.any():
        return np.full((h, w), np.inf)

    # Column sweep (vectorized across columns): cell distance to the
    # nearest mark in the same column, or +inf for empty columns.
    col = np.full((h, w), np.inf)
    col[mask] = 0.0
    for i in range(1, h):
        col[i] = np.minimum(col[i], col[i - 1] + 1.0)
    for i in range(h - 2, -1, -1):
        col[i] = np.minimum(col[i], col[i + 1] + 1.0)

    sq = np.empty((h, w))
    colsq = np.ascontiguousarray(col * col)
    if _envelope_rows_jit is not None:
        _envelope_rows_jit(colsq, sq)
    else:
        _envelope_rows_py(colsq, sq)
    return np.sqrt(sq) * spec.resolution


def _build_fusion_table() -> np.ndarray:
    """Fused state indexed by [dogm, corr, c > c_min, d <= d_min]."""
    t = np.empty((N_STATES, N_STATES, 2, 2), dtype=np.uint8)
    for cbit in (0, 1):
        for dbit in (0, 1):
            t[U, :, cbit, dbit] = U
            t[F, U, cbit, dbit] = F
            t[F, F, cbit, dbit] = F
            t[F, S, cbit, dbit] = S if dbit else F
            t[F, D, cbit, dbit] = D if dbit else F
            t[S, U, cbit, dbit] = S
            t[S, F, cbit, dbit] = S
            t[S, S, cbit, dbit] = S
            t[S, D, cbit, dbit] = D if cbit else S
            t[D, U, cbit, dbit] = D
            t[D, F, cbit, dbit] = S if cbit else D
            t[D, S, cbit, dbit] = S if cbit else D
            t[D, D, cbit, dbit] = D
    return t


_FUSION_TABLE = _build_fusion_table()


def fuse_cell(dogm_state: int, corr: CorrectionCell, d_meas: float,
              params: FusionParams) -> int:
    """Fused state for one cell (total over all inputs)."""
    cbit = 1 if corr.confidence > params.c_min else 0
    dbit = 1 if d_meas <= params.d_min else 0
    return int(_FUSION_TABLE[dogm_state, corr.state, cbit, dbit])


def fuse_grid(frame: DogmFrame, corr: CorrectionGrid, d_field: np.ndarray,
              params: FusionParams) -> DogmFrame:
    """Apply the fusion table per cell, overriding beliefs where it changes states.

    Cells whose fused state equals the current winning state keep their full
    belief bit-for-bit; changed cells are rewritten as a floored one-hot on
    the fused state and then evolve normally from the next update on.
    """
    if frame.spec != corr.spec:
        raise GridMismatchError("frame and correction grid specs differ")
    if d_field.shape != (frame.spec.height_cells, frame.spec.width_cells):
        raise GridMismatchError("distance field shape mismatch")
    dogm_states = frame.states()
    cbits = (corr.confidence > params.c_min).astype(np.int64)
    dbits = (d_field <= params.d_min).astype(np.int64)
    fused = _FUSION_TABLE[dogm_states.astype(np.int64), corr.states.astype(np.int64),
                          cbits, dbits]
    changed = fused != dogm_states
    if not changed.any():
        return frame
    cells = frame.cells.copy()
    overrides = np.full((int(changed.sum()), N_STATES), BELIEF_FLOOR)
    overrides[np.arange(overrides.shape[0]), fused[changed]] = 1.0 - 3 * BELIEF_FLOOR
    cells[changed] = overrides
    return replace(frame, cells=cells, velocity=None)
