"""Evaluation metrics and the multi-task performance-drop summary."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import palette as pal

SALIENCY_THRESHOLDS = np.arange(0.05, 0.951, 0.05)

# metric name and direction per task (higher_better)
TASK_METRICS = {
    pal.TASK_EDGES: ("boundary_f", True),
    pal.TASK_SEGMENTATION: ("miou", True),
    pal.TASK_PARTS: ("miou", True),
    pal.TASK_NORMALS: ("mean_angular_error_deg", False),
    pal.TASK_SALIENCY: ("max_miou", True),
}


def miou(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray | None, n_classes: int):
    """Mean IoU over classes present in gt, on valid pixels. None if no valid pixels."""
    if valid is None:
        valid = np.ones(gt.shape, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    p = np.asarray(pred)[valid].ravel()
    g = np.asarray(gt)[valid].ravel()
    if g.size == 0:
        return None
    conf = np.bincount(g * n_classes + p, minlength=n_classes * n_classes).reshape(
        n_classes, n_classes
    )
    inter = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - inter
    present = conf.sum(axis=1) > 0
    ious = inter[present] / np.maximum(union[present], 1)
    return float(ious.mean())


def saliency_max_miou(prob: np.ndarray, gt: np.ndarray, valid: np.ndarray | None = None):
    """Maximum binary mIoU over the threshold grid 0.05..0.95."""
    best = None
    for thr in SALIENCY_THRESHOLDS:
        v = miou((prob >= thr).astype(np.int64), gt.astype(np.int64), valid, 2)
        if v is not None and (best is None or v > best):
            best = v
    return best


def mean_angular_error(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray | None = None):
    """Mean angle between unit-vector fields, in degrees. Fields are (..., 3, H, W)."""
    dot = (pred * gt).sum(axis=-3)
    dot = np.clip(dot, -1.0, 1.0)
    ang = np.degrees(np.arccos(dot))
    if valid is not None:
        ang = ang[valid]
    if ang.size == 0:
        return None
    return float(ang.mean())


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a (2r+1) square element, via shifted maxima."""
    out = mask.copy()
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            shifted = np.zeros_like(mask)
            ys = slice(max(dy, 0), mask.shape[0] + min(dy, 0))
            xs = slice(max(dx, 0), mask.shape[1] + min(dx, 0))
            ys_src = slice(max(-dy, 0), mask.shape[0] + min(-dy, 0))
            xs_src = slice(max(-dx, 0), mask.shape[1] + min(-dx, 0))
            shifted[ys, xs] = mask[ys_src, xs_src]
            out |= shifted
    return out


def boundary_f(prob: np.ndarray, gt: np.ndarray, valid: np.ndarray | None = None, tolerance: int = 1):
    """Boundary F-measure with pixel tolerance, maximized over the threshold
    grid (dataset-optimal-threshold style). prob and gt are (H, W)."""
    if valid is None:
        valid = np.ones(gt.shape, dtype=bool)
    gt_b = gt.astype(bool) & valid
    gt_dil = _dilate(gt_b, tolerance)
    best = 0.0
    for thr in SALIENCY_THRESHOLDS:
        pred_b = (prob >= thr) & valid
        npred, ngt = pred_b.sum(), gt_b.sum()
        if npred == 0 or ngt == 0:
            continue
        precision = (pred_b & gt_dil).sum() / npred
        recall = (gt_b & _dilate(pred_b, tolerance)).sum() / ngt
        if precision + recall > 0:
            best = max(best, 2 * precision * recall / (precision + recall))
    return float(best)


def delta_m(m_method: list, m_baseline: list, lower_better: list) -> float:
    """Average per-task relative change vs a baseline, sign-corrected per
    metric direction, in percent."""
    if not (len(m_method) == len(m_baseline) == len(lower_better)):
        raise ValueError("delta_m inputs must have equal lengths")
    total = 0.0
    for m, b, d in zip(m_method, m_baseline, lower_better):
        if b == 0:
            raise ValueError("baseline value of 0 makes the relative drop undefined")
        total += ((-1.0) ** int(d)) * (m - b) / b
    return 100.0 * total / len(m_method)


@dataclass
class MetricsReport:
    """Per-task scores plus an optional drop summary vs a named baseline."""

    scores: dict = field(default_factory=dict)  # task name -> value (or None)
    baseline_name: str | None = None
    delta_m_pct: float | None = None

    def set(self, task: int, value):
        self.scores[pal.TASK_NAMES[task]] = value

    def compare_to(self, baseline: "MetricsReport", name: str = "baseline"):
        tasks = [t for t in pal.TASK_NAMES if self.scores.get(t) is not None and baseline.scores.get(t) is not None]
        m = [self.scores[t] for t in tasks]
        b = [baseline.scores[t] for t in tasks]
        d = [not TASK_METRICS[pal.TASK_NAMES.index(t)][1] for t in tasks]
        self.delta_m_pct = delta_m(m, b, d)
        self.baseline_name = name
        return self.delta_m_pct

    def to_dict(self) -> dict:
        out = {}
        for task_id, name in enumerate(pal.TASK_NAMES):
            if name in self.scores:
                metric, higher = TASK_METRICS[task_id]
                out[name] = {
                    "metric": metric,
                    "value": self.scores[name],
                    "higher_better": higher,
                }
        if self.delta_m_pct is not None:
            out["delta_m_pct"] = self.delta_m_pct
            out["baseline"] = self.baseline_name
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        rep = cls()
        for name in pal.TASK_NAMES:
            if name in d:
                rep.scores[name] = d[name]["value"]
        rep.delta_m_pct = d.get("delta_m_pct")
        rep.baseline_name = d.get("baseline")
        return rep
