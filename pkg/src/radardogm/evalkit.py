"""Evaluation metrics: per-class grid quality and object-level detection.

Grid quality is scored per state class (free, static, dynamic) over the
cells the ground truth observed.  Object-level evaluation clusters
particles with DBSCAN, derives a confidence from cluster weight and age,
and computes average precision over center-distance match thresholds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corrector import GtBox
from .grid import D, F, S, U
from .particles import ParticleSet
from .simworld import GtFrame

try:
    from numba import njit as _njit
except ImportError:                      # pragma: no cover - numba optional
    _njit = None


@dataclass(frozen=True)
class ClassScore:
    iou: float
    precision: float
    recall: float


@dataclass(frozen=True)
class GridMetrics:
    free: ClassScore
    static: ClassScore
    dynamic: ClassScore
    mean_iou: float

    def as_dict(self) -> dict:
        return {
            "free": vars(self.free), "static": vars(self.static),
            "dynamic": vars(self.dynamic), "mean_iou": self.mean_iou,
        }


def _score(tp: int, fp: int, fn: int) -> ClassScore:
    # empty-class convention: 0/0 counts as perfect agreement
    iou = tp / (tp + fp + fn) if (tp + fp + fn) else 1.0
    precision = tp / (tp + fp) if (tp + fp) else 1.0
    recall = tp / (tp + fn) if (tp + fn) else 1.0
    return ClassScore(iou=iou, precision=precision, recall=recall)


def grid_metrics(pred: np.ndarray, truth: np.ndarray) -> GridMetrics:
    """Per-class IoU/precision/recall over cells the truth observed (non-unknown)."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    scored = truth != U
    p = pred[scored]
    t = truth[scored]
    out = {}
    for cls, name in ((F, "free"), (S, "static"), (D, "dynamic")):
        tp = int(np.count_nonzero((p == cls) & (t == cls)))
        fp = int(np.count_nonzero((p == cls) & (t != cls)))
        fn = int(np.count_nonzero((p != cls) & (t == cls)))
        out[name] = _score(tp, fp, fn)
    mean_iou = (out["free"].iou + out["static"].iou + out["dynamic"].iou) / 3.0
    return GridMetrics(free=out["free"], static=out["static"],
                       dynamic=out["dynamic"], mean_iou=mean_iou)


def accumulate_confusion(pred: np.ndarray, truth: np.ndarray,
                         counts: dict | None = None) -> dict:
    """Running TP/FP/FN tallies per class, for sequence-level grid metrics."""
    if counts is None:
        counts = {name: [0, 0, 0] for name in ("free", "static", "dynamic")}
    scored = truth != U
    p = pred[scored]
    t = truth[scored]
    for cls, name in ((F, "free"), (S, "static"), (D, "dynamic")):
        counts[name][0] += int(np.count_nonzero((p == cls) & (t == cls)))
        counts[name][1] += int(np.count_nonzero((p == cls) & (t != cls)))
        counts[name][2] += int(np.count_nonzero((p != cls) & (t == cls)))
    return counts


def metrics_from_confusion(counts: dict) -> GridMetrics:
    scores = {name: _score(*counts[name]) for name in counts}
    mean_iou = sum(s.iou for s in scores.values()) / 3.0
    return GridMetrics(free=scores["free"], static=scores["static"],
                       dynamic=scores["dynamic"], mean_iou=mean_iou)


@dataclass(frozen=True)
class ClusterParams:
    eps: float = 0.6
    min_pts: int = 5
    tau_age: float = 5.0


@dataclass(frozen=True)
class DetectedObject:
    centroid: tuple[float, float]
    velocity: tuple[float, float]
    confidence: float
    particle_count: int


def _dbscan_bins(points: np.ndarray, eps: float):
    """Grid-hash prep: per-point bin index plus per-bin point ranges."""
    keys = np.floor(points / eps).astype(np.int64)
    kmin = keys.min(axis=0)
    span_y = int(keys[:, 1].max() - kmin[1]) + 1
    linear = (keys[:, 0] - kmin[0]) * span_y + (keys[:, 1] - kmin[1])
    order = np.argsort(linear, kind="stable")
    uniq, starts = np.unique(linear[order], return_index=True)
    starts = np.append(starts, points.shape[0])
    return linear, order, uniq, starts, span_y


def _dbscan_py(points, eps_sq, min_pts, linear, order, uniq, starts, span_y):
    n = points.shape[0]
    neighbor_offsets = np.array([(dx * span_y + dy)
                                 for dx in (-1, 0, 1) for dy in (-1, 0, 1)])

    def neighbors(i):
        cand = []
        for off in neighbor_offsets:
            pos = np.searchsorted(uniq, linear[i] + off)
            if pos < uniq.size and uniq[pos] == linear[i] + off:
                cand.append(order[starts[pos]:starts[pos + 1]])
        cand = np.concatenate(cand) if len(cand) > 1 else cand[0]
        d = points[cand] - points[i]
        return cand[d[:, 0] ** 2 + d[:, 1] ** 2 <= eps_sq]

    core = np.zeros(n, dtype=bool)
    for i in range(n):
        core[i] = neighbors(i).size >= min_pts
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        labels[i] = cluster
        stack = [i]
        while stack:
            j = stack.pop()
            for k in neighbors(j):
                if core[k] and labels[k] == -1:
                    labels[k] = cluster
                    stack.append(int(k))
        cluster += 1
    for i in range(n):
        if core[i]:
            continue
        hits = neighbors(i)
        hits = hits[core[hits]]
        if hits.size:
            labels[i] = labels[hits.min()]
    return labels


def _make_dbscan_jit():
    if _njit is None:
        return None

    @_njit(cache=True)
    def _kernel(points, eps_sq, min_pts, linear, order, uniq, starts, span_y):
        n = points.shape[0]
        m = uniq.shape[0]
        offs = np.empty(9, np.int64)
        idx = 0
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                offs[idx] = dx * span_y + dy
                idx += 1

        core = np.zeros(n, np.bool_)
        for i in range(n):
            count = 0
            for o in range(9):
                target = linear[i] + offs[o]
                pos = np.searchsorted(uniq, target)
                if pos >= m or uniq[pos] != target:
                    continue
                for s in range(starts[pos], starts[pos + 1]):
                    k = order[s]
                    dx = points[k, 0] - points[i, 0]
                    dy = points[k, 1] - points[i, 1]
                    if dx * dx + dy * dy <= eps_sq:
                        count += 1
            if count >= min_pts:
                core[i] = True

        labels = np.full(n, -1, np.int64)
        stack = np.empty(n, np.int64)
        cluster = 0
        for i in range(n):
            if not core[i] or labels[i] != -1:
                continue
            labels[i] = cluster
            stack[0] = i
            top = 1
            while top > 0:
                top -= 1
                j = stack[top]
                for o in range(9):
                    target = linear[j] + offs[o]
                    pos = np.searchsorted(uniq, target)
                    if pos >= m or uniq[pos] != target:
                        continue
                    for s in range(starts[pos], starts[pos + 1]):
                        k = order[s]
                        if not core[k] or labels[k] != -1:
                            continue
                        dx = points[k, 0] - points[j, 0]
                        dy = points[k, 1] - points[j, 1]
                        if dx * dx + dy * dy <= eps_sq:
                            labels[k] = cluster
                            stack[top] = k
                            top += 1
            cluster += 1

        for i in range(n):
            if core[i]:
                continue
            best = -1
            for o in range(9):
                target = linear[i] + offs[o]
                pos = np.searchsorted(uniq, target)
                if pos >= m or uniq[pos] != target:
                    continue
                for s in range(starts[pos], starts[pos + 1]):
                    k = order[s]
                    if not core[k]:
                        continue
                    dx = points[k, 0] - points[i, 0]
                    dy = points[k, 1] - points[i, 1]
                    if dx * dx + dy * dy <= eps_sq and (best < 0 or k < best):
                        best = k
            if best >= 0:
                labels[i] = labels[best]
        return labels

    return _kernel


_dbscan_jit = _make_dbscan_jit()


def dbscan_labels(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Deterministic DBSCAN labels (-1 = noise), independent of input order.

    Neighborhoods include the point itself.  Core points (>= min_pts
    neighbors within eps) cluster by connected components of the core
    adjacency graph; each border point joins the cluster of its
    lowest-index core neighbor; clusters are numbered by their
    lowest-index core point.  Neighbor queries use an eps-sized grid hash,
    and a compiled kernel handles large dense sets when numba is present.
    """
    n = points.shape[0]
    if n == 0:
        return np.full(0, -1, dtype=np.int64)
    points = np.ascontiguousarray(points, dtype=float)
    linear, order, uniq, starts, span_y = _dbscan_bins(points, eps)
    args = (points, eps * eps, min_pts, linear, order, uniq, starts, span_y)
    if _dbscan_jit is not None:
        return _dbscan_jit(*args)
    return _dbscan_py(*args)


def extract_objects(particles: ParticleSet,
                    params: ClusterParams = ClusterParams()) -> list[DetectedObject]:
    """Cluster particles into objects with weight/age-derived confidences."""
    if len(particles) == 0:
        return []
    labels = dbscan_labels(particles.pos, params.eps, params.min_pts)
    objects = []
    cluster_weights = []
    for cl in range(labels.max() + 1 if labels.max() >= 0 else 0):
        members = labels == cl
        count = int(members.sum())
        if count < params.min_pts:
            continue
        w = particles.weight[members]
        wsum = float(w.sum())
        share = w / wsum if wsum > 0 else np.full(count, 1.0 / count)
        centroid = particles.pos[members].T @ share
        velocity = particles.vel[members].T @ share
        age_mean = float(particles.age[members].mean())
        objects.append((centroid, velocity, wsum, age_mean, count))
        cluster_weights.append(wsum)
    if not objects:
        return []
    w_max = max(cluster_weights)
    out = []
    for centroid, velocity, wsum, age_mean, count in objects:
        conf = (wsum / w_max if w_max > 0 else 0.0) \
            * (1.0 - math.exp(-age_mean / params.tau_age))
        out.append(DetectedObject(centroid=(float(centroid[0]), float(centroid[1])),
                                  velocity=(float(velocity[0]), float(velocity[1])),
                                  confidence=min(max(conf, 0.0), 1.0),
                                  particle_count=count))
    return out


@dataclass(frozen=True)
class ApParams:
    thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    speed_filter: float = 0.5
    grid_extent: tuple[float, float] = (100.0, 100.0)


@dataclass(frozen=True)
class ApScore:
    ap: float
    precision: float
    recall: float
    n_gt: int


@dataclass(frozen=True)
class ApReport:
    per_class: dict
    overall: ApScore

    def as_dict(self) -> dict:
        return {"overall": vars(self.overall),
                "per_class": {k: vars(v) for k, v in self.per_class.items()}}


def _scored_gt(gt: GtFrame, params: ApParams, class_id: str | None):
    scored, ignored = [], []
    hx, hy = params.grid_extent[0] / 2.0, params.grid_extent[1] / 2.0
    for box in gt.boxes:
        inside = (abs(box.center[0] - gt.ego_pose.x) <= hx
                  and abs(box.center[1] - gt.ego_pose.y) <= hy)
        wanted = (box.speed > params.speed_filter and inside
                  and (class_id is None or box.class_id == class_id))
        (scored if wanted else ignored).append(box)
    return scored, ignored


def _rank_detections(pairs):
    ranked = []
    for fi, (dets, _gt) in enumerate(pairs):
        for di, det in enumerate(dets):
            ranked.append((-det.confidence, fi, di, det))
    ranked.sort(key=lambda r: (r[0], r[1], r[2]))
    return ranked


def _pr_curve(flags: list[bool], n_gt: int):
    """Points (recall, precision) after each counted detection."""
    tp = fp = 0
    pts = []
    for is_tp in flags:
        if is_tp:
            tp += 1
        else:
            fp += 1
        pts.append((tp / n_gt if n_gt else 0.0, tp / (tp + fp)))
    return pts


def _trapezoid_ap(pts) -> float:
    if not pts:
        return 0.0
    area = 0.0
    prev_r, prev_p = 0.0, 1.0
    for r, p in pts:
        area += (r - prev_r) * (p + prev_p) / 2.0
        prev_r, prev_p = r, p
    return area


def evaluate_threshold(pairs, threshold: float, params: ApParams,
                       class_id: str | None = None):
    """Greedy confidence-ranked matching at one center-distance threshold.

    Returns (tp/fp flags in rank order, matched-gt count, total gt).
    Detections within the threshold of an excluded (wrong class, too slow,
    or out of grid) box count neither as TP nor as FP.
    """
    per_frame = [_scored_gt(gt, params, class_id) for _dets, gt in pairs]
    n_gt = sum(len(s) for s, _ in per_frame)
    matched = [np.zeros(len(s), dtype=bool) for s, _ in per_frame]
    flags = []
    for _negconf, fi, _di, det in _rank_detections(pairs):
        scored, ignored = per_frame[fi]
        best_j, best_d = -1, threshold
        for j, box in enumerate(scored):
            if matched[fi][j]:
                continue
            dist = math.hypot(det.centroid[0] - box.center[0],
                              det.centroid[1] - box.center[1])
            if dist <= best_d:
                best_j, best_d = j, dist
        if best_j >= 0:
            matched[fi][best_j] = True
            flags.append(True)
            continue
        if any(math.hypot(det.centroid[0] - box.center[0],
                          det.centroid[1] - box.center[1]) <= threshold
               for box in ignored):
            continue
        flags.append(False)
    return flags, int(sum(m.sum() for m in matched)), n_gt


def average_precision(pairs, params: ApParams = ApParams()) -> ApReport:
    """AP / precision / recall per class and over all dynamic objects.

    ``pairs`` is a sequence of (detections, GtFrame) with detections from
    :func:`extract_objects`.  AP at each threshold is the trapezoidal area
    under the confidence-ranked precision-recall curve; the reported AP is
    the mean over thresholds, precision/recall are taken at the end of the
    ranked list (also averaged over thresholds).
    """
    classes = sorted({b.class_id for _d, gt in pairs for b in gt.boxes})
    per_class = {}
    for class_id in [None] + classes:
        aps, precisions, recalls, n_gt_any = [], [], [], 0
        for thr in params.thresholds:
            flags, n_tp, n_gt = evaluate_threshold(pairs, thr, params, class_id)
            n_gt_any = n_gt
            pts = _pr_curve(flags, n_gt)
            aps.append(_trapezoid_ap(pts) if n_gt else 0.0)
            n_counted = len(flags)
            precisions.append(n_tp / n_counted if n_counted else 0.0)
            recalls.append(n_tp / n_gt if n_gt else 0.0)
        score = ApScore(ap=float(np.mean(aps)), precision=float(np.mean(precisions)),
                        recall=float(np.mean(recalls)), n_gt=n_gt_any)
        if class_id is None:
            overall = score
        elif n_gt_any > 0:
            per_class[class_id] = score
    return ApReport(per_class=per_class, overall=overall)
