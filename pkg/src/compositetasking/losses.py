"""Per-task losses, anchor-based class embedding in the 3-channel output,
and the masked composite loss.

Each task's loss term averages its per-pixel loss over exactly the pixels
where the palette requests that task AND a valid label exists. Pixels are
gathered by index before any label value is touched, so labels outside a
task's mask are never read and the gradient w.r.t. the network output is
exactly zero there.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources as importlib_resources

import numpy as np

from . import autodiff as ad
from . import palette as pal
from .autodiff import Tensor

EPS_ANCHOR = 1e-3
PROB_FLOOR = 1e-12
NORM_FLOOR = 1e-8


def _load_anchor_resource(name: str) -> dict:
    text = importlib_resources.files("compositetasking.resources").joinpath(name).read_text()
    return json.loads(text)


def anchor_table(task: str) -> np.ndarray:
    """Scaled (C, 3) anchor table in [0, 1] for "segmentation" or "parts"."""
    fname = {"segmentation": "anchors_segmentation.json", "parts": "anchors_parts.json"}[task]
    spec = _load_anchor_resource(fname)
    raw = np.asarray([c["anchor"] for c in spec["classes"]], dtype=np.float64)
    return (raw / spec["value_range"]).astype(np.float32)


def anchor_class_colors(task: str) -> list:
    spec = _load_anchor_resource(
        {"segmentation": "anchors_segmentation.json", "parts": "anchors_parts.json"}[task]
    )
    return [{"id": c["id"], "name": c["name"], "rgb": c["anchor"]} for c in spec["classes"]]


def anchor_scores(o: np.ndarray, anchors: np.ndarray, eps: float = EPS_ANCHOR) -> np.ndarray:
    """Inverse-distance scores l_i = 1 / (||o - a_i|| + eps); o is (..., 3)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = np.linalg.norm(np.asarray(o)[..., None, :] - anchors, axis=-1)
    return 1.0 / (d + eps)


def anchor_probs(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def decode_class(o: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Nearest-anchor class id; ties resolve to the lowest index."""
    d = np.linalg.norm(np.asarray(o)[..., None, :] - anchors, axis=-1)
    return d.argmin(axis=-1)


@dataclass
class LossWeights:
    lambdas: dict = field(
        default_factory=lambda: {
            pal.TASK_SEGMENTATION: 3.0,
            pal.TASK_PARTS: 4.0,
            pal.TASK_EDGES: 50.0,
            pal.TASK_SALIENCY: 8.0,
            pal.TASK_NORMALS: 4.0,
        }
    )
    focal_gamma: float = 2.0
    edge_pos_weight: float = 0.95
    eps_anchor: float = EPS_ANCHOR

    def __post_init__(self):
        if any(v <= 0 for v in self.lambdas.values()):
            raise ValueError("loss weights must be positive")


@dataclass
class LabelSet:
    """Dense labels plus validity masks; arrays are batched (N, ...)."""

    segmentation: np.ndarray  # (N, H, W) int
    parts: np.ndarray  # (N, H, W) int
    normals: np.ndarray  # (N, 3, H, W) unit vectors
    edges: np.ndarray  # (N, H, W) in {0, 1}
    saliency: np.ndarray  # (N, H, W) in {0, 1}
    valid: dict = None  # task id -> (N, H, W) bool

    def __post_init__(self):
        n, h, w = self.segmentation.shape
        if self.valid is None:
            self.valid = {k: np.ones((n, h, w), dtype=bool) for k in range(pal.NUM_TASKS)}


# -- per-pixel losses on gathered (P, ...) arrays ---------------------------


def _anchor_focal(o: Tensor, target: np.ndarray, anchors: np.ndarray, gamma: float, eps: float) -> Tensor:
    """Focal loss through anchor scores; o is (P, 3), target (P,) class ids."""
    p = o.shape[0]
    diff = o.reshape(p, 1, 3) - Tensor(anchors[None, :, :].astype(o.dtype))
    dist = ad.sqrt(ad.clip_min((diff * diff).sum(axis=2), 1e-24))
    scores = 1.0 / (dist + eps)
    probs = ad.softmax(scores, axis=1)
    onehot = np.zeros((p, anchors.shape[0]), dtype=o.dtype.type)
    onehot[np.arange(p), target] = 1.0
    p_t = (probs * Tensor(onehot)).sum(axis=1)
    p_t = ad.clip_min(p_t, PROB_FLOOR)
    focal = -((1.0 - p_t) ** gamma) * ad.log(p_t)
    return focal.mean()


def _weighted_bce(o: Tensor, target: np.ndarray, w_pos: float, w_neg: float) -> Tensor:
    """Per-channel sigmoid + weighted BCE averaged over channels and pixels.

    o is (P, 3); target (P,) in {0, 1} applies to every channel.
    """
    t = target.astype(o.dtype.type)[:, None]
    prob = ad.sigmoid(o)
    ll_pos = ad.log(ad.clip_min(prob, PROB_FLOOR))
    ll_neg = ad.log(ad.clip_min(1.0 - prob, PROB_FLOOR))
    loss = -(w_pos * Tensor(t) * ll_pos + w_neg * Tensor(1.0 - t) * ll_neg)
    return loss.mean()


def saliency_class_weights(q: float) -> tuple:
    """Inverse-frequency weights normalized to sum 1; degenerate q falls back to 0.5/0.5."""
    if q <= 0.0 or q >= 1.0:
        return 0.5, 0.5
    w_pos, w_neg = 1.0 / q, 1.0 / (1.0 - q)
    s = w_pos + w_neg
    return w_pos / s, w_neg / s


def _normals_cosine(o: Tensor, target: np.ndarray) -> Tensor:
    """1 - cosine similarity; o is (P, 3), target unit (P, 3)."""
    norm = ad.sqrt(ad.clip_min((o * o).sum(axis=1), NORM_FLOOR**2))
    dot = (o * Tensor(target.astype(o.dtype.type))).sum(axis=1)
    return (1.0 - dot / norm).mean()


_SEG_ANCHORS = None
_PARTS_ANCHORS = None


def _tables():
    global _SEG_ANCHORS, _PARTS_ANCHORS
    if _SEG_ANCHORS is None:
        _SEG_ANCHORS = anchor_table("segmentation")
        _PARTS_ANCHORS = anchor_table("parts")
    return _SEG_ANCHORS, _PARTS_ANCHORS


def composite_loss(
    output: Tensor,
    labels: LabelSet,
    palette: np.ndarray,
    weights: LossWeights | None = None,
):
    """Masked total loss: sum_k lambda_k * L_k over task-requested pixels.

    Returns (total, per_task) where per_task maps task id to the unweighted
    term value (0.0 for tasks with no pixels).
    """
    weights = weights if weights is not None else LossWeights()
    n = output.shape[0]
    if palette.ndim == 2:
        palette = np.broadcast_to(palette, (n,) + palette.shape)
    seg_anchors, parts_anchors = _tables()

    total = None
    per_task = {}
    for task in range(pal.NUM_TASKS):
        mask = (palette == task) & labels.valid[task]
        idx = np.nonzero(mask)
        if idx[0].size == 0:
            per_task[task] = 0.0
            continue
        o = ad.gather_pixels(output, *idx)
        if task == pal.TASK_SEGMENTATION:
            term = _anchor_focal(
                o, labels.segmentation[idx], seg_anchors, weights.focal_gamma, weights.eps_anchor
            )
        elif task == pal.TASK_PARTS:
            term = _anchor_focal(
                o, labels.parts[idx], parts_anchors, weights.focal_gamma, weights.eps_anchor
            )
        elif task == pal.TASK_EDGES:
            term = _weighted_bce(
                o, labels.edges[idx], weights.edge_pos_weight, 1.0 - weights.edge_pos_weight
            )
        elif task == pal.TASK_SALIENCY:
            t = labels.saliency[idx]
            w_pos, w_neg = saliency_class_weights(float(t.mean()))
            term = _weighted_bce(o, t, w_pos, w_neg)
        else:  # normals
            nv = labels.normals[idx[0], :, idx[1], idx[2]]  # (P, 3)
            term = _normals_cosine(o, nv)
        per_task[task] = term.item()
        weighted = term * weights.lambdas[task]
        total = weighted if total is None else total + weighted

    if total is None:
        total = Tensor(np.zeros((), dtype=output.dtype))
    return total, per_task


def focal_loss(probs: np.ndarray, target: int, gamma: float) -> float:
    """Reference scalar focal loss -(1 - p_t)^gamma * log(p_t)."""
    p_t = max(float(probs[target]), PROB_FLOOR)
    return -((1.0 - p_t) ** gamma) * np.log(p_t)
