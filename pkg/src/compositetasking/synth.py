"""Procedural multi-task scenes with exact dense ground truth.

Each scene is a handful of shaded primitives on a textured background:
spheres (animal-like), tilted boxes (household-like), horizontal rounded
slabs (vehicle-like), and capsule figures with six labeled segments
(person-like). Normals come from the analytic surface geometry, so every
label is exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import palette as pal
from .autodiff import Tensor
from .losses import LabelSet

# synthetic semantic class -> anchor-table segmentation label
SEG_LABEL_OF_CLASS = {
    pal.CLASS_BACKGROUND: 0,  # Background
    pal.CLASS_PERSON: 20,  # Person
    pal.CLASS_ANIMAL: 13,  # Dog
    pal.CLASS_VEHICLE: 17,  # Bus
    pal.CLASS_HOUSEHOLD: 10,  # Sofa
}

_CLASS_BASE_COLOR = {
    pal.CLASS_PERSON: (0.85, 0.65, 0.5),
    pal.CLASS_ANIMAL: (0.6, 0.45, 0.25),
    pal.CLASS_VEHICLE: (0.8, 0.2, 0.2),
    pal.CLASS_HOUSEHOLD: (0.3, 0.5, 0.8),
}


@dataclass
class SyntheticScene:
    image: np.ndarray  # (3, H, W) in [0, 1]
    semantics: np.ndarray  # (H, W) synthetic class ids
    segmentation: np.ndarray  # (H, W) anchor-table class ids
    parts: np.ndarray  # (H, W) part ids, 0 outside person-like figures
    normals: np.ndarray  # (3, H, W) unit vectors
    edges: np.ndarray  # (H, W) in {0, 1}
    saliency: np.ndarray  # (H, W) in {0, 1}

    @property
    def shape(self):
        return self.semantics.shape


def semantic_boundary(semantics: np.ndarray) -> np.ndarray:
    """Pixels with any 4-neighbor of a different class (both boundary sides)."""
    b = np.zeros(semantics.shape, dtype=bool)
    b[:-1, :] |= semantics[:-1, :] != semantics[1:, :]
    b[1:, :] |= semantics[1:, :] != semantics[:-1, :]
    b[:, :-1] |= semantics[:, :-1] != semantics[:, 1:]
    b[:, 1:] |= semantics[:, 1:] != semantics[:, :-1]
    return b.astype(np.uint8)


def _cyl_normal_x(xx, cx, half_w):
    """Cylinder around a vertical axis: n = (t, 0, sqrt(1 - t^2))."""
    t = np.clip((xx - cx) / max(half_w, 1.0), -0.98, 0.98)
    return np.stack([t, np.zeros_like(t), np.sqrt(1.0 - t * t)])


def _cyl_normal_y(yy, cy, half_h):
    t = np.clip((yy - cy) / max(half_h, 1.0), -0.98, 0.98)
    return np.stack([np.zeros_like(t), t, np.sqrt(1.0 - t * t)])


class _Canvas:
    def __init__(self, h, w):
        self.h, self.w = h, w
        self.yy, self.xx = np.mgrid[0:h, 0:w].astype(np.float64)
        self.semantics = np.zeros((h, w), dtype=np.uint8)
        self.parts = np.zeros((h, w), dtype=np.uint8)
        self.normals = np.zeros((3, h, w), dtype=np.float64)
        self.normals[2] = 1.0  # background faces the viewer
        self.albedo = np.zeros((3, h, w), dtype=np.float64)

    def paint(self, mask, cls, normal_field, color, part=None):
        self.semantics[mask] = cls
        self.normals[:, mask] = normal_field[:, mask] if normal_field.ndim == 3 else normal_field[:, None]
        for c in range(3):
            self.albedo[c][mask] = color[c]
        if part is not None:
            self.parts[mask] = part


def _add_sphere(cv: _Canvas, rng):
    r = rng.uniform(0.1, 0.22) * min(cv.h, cv.w)
    cy = rng.uniform(r, cv.h - r)
    cx = rng.uniform(r, cv.w - r)
    d2 = (cv.yy - cy) ** 2 + (cv.xx - cx) ** 2
    mask = d2 < r * r
    nz = np.sqrt(np.clip(1.0 - d2 / (r * r), 0.0, 1.0))
    normals = np.stack([(cv.xx - cx) / r, (cv.yy - cy) / r, nz])
    color = np.asarray(_CLASS_BASE_COLOR[pal.CLASS_ANIMAL]) * rng.uniform(0.8, 1.2)
    cv.paint(mask, pal.CLASS_ANIMAL, normals, np.clip(color, 0, 1))


def _add_box(cv: _Canvas, rng):
    bh = rng.uniform(0.15, 0.35) * cv.h
    bw = rng.uniform(0.15, 0.35) * cv.w
    y0 = rng.uniform(0, cv.h - bh)
    x0 = rng.uniform(0, cv.w - bw)
    mask = (cv.yy >= y0) & (cv.yy < y0 + bh) & (cv.xx >= x0) & (cv.xx < x0 + bw)
    # one tilted face: constant normal with positive z
    tilt = rng.uniform(-0.5, 0.5, size=2)
    n = np.array([tilt[0], tilt[1], 1.0])
    n /= np.linalg.norm(n)
    color = np.asarray(_CLASS_BASE_COLOR[pal.CLASS_HOUSEHOLD]) * rng.uniform(0.8, 1.2)
    cv.paint(mask, pal.CLASS_HOUSEHOLD, n, np.clip(color, 0, 1))


def _add_vehicle(cv: _Canvas, rng):
    bh = rng.uniform(0.12, 0.25) * cv.h
    bw = rng.uniform(0.25, 0.45) * cv.w
    y0 = rng.uniform(0, cv.h - bh)
    x0 = rng.uniform(0, cv.w - bw)
    mask = (cv.yy >= y0) & (cv.yy < y0 + bh) & (cv.xx >= x0) & (cv.xx < x0 + bw)
    normals = _cyl_normal_y(cv.yy, y0 + bh / 2, bh / 2)
    color = np.asarray(_CLASS_BASE_COLOR[pal.CLASS_VEHICLE]) * rng.uniform(0.8, 1.2)
    cv.paint(mask, pal.CLASS_VEHICLE, normals, np.clip(color, 0, 1))


def _add_person(cv: _Canvas, rng):
    ph = rng.uniform(0.5, 0.75) * cv.h
    cx = rng.uniform(0.25 * ph, cv.w - 0.25 * ph)
    ty = rng.uniform(0, cv.h - ph)
    color = np.asarray(_CLASS_BASE_COLOR[pal.CLASS_PERSON]) * rng.uniform(0.85, 1.15)
    color = np.clip(color, 0, 1)
    yy, xx = cv.yy, cv.xx

    def stripe(y_lo, y_hi, x_c, half_w):
        return (
            (yy >= ty + y_lo * ph)
            & (yy < ty + y_hi * ph)
            & (np.abs(xx - x_c) < half_w * ph)
        )

    # part id -> (mask, x-center, half-width) ; cylindrical normals per part
    r_head = 0.12 * ph
    head = ((yy - (ty + r_head)) ** 2 + (xx - cx) ** 2) < r_head**2
    segments = [
        (1, head, cx, r_head),
        (2, stripe(0.24, 0.55, cx, 0.14), cx, 0.14 * ph),
        (3, stripe(0.25, 0.40, cx - 0.19 * ph, 0.05), cx - 0.19 * ph, 0.05 * ph),
        (3, stripe(0.25, 0.40, cx + 0.19 * ph, 0.05), cx + 0.19 * ph, 0.05 * ph),
        (4, stripe(0.40, 0.55, cx - 0.19 * ph, 0.05), cx - 0.19 * ph, 0.05 * ph),
        (4, stripe(0.40, 0.55, cx + 0.19 * ph, 0.05), cx + 0.19 * ph, 0.05 * ph),
        (5, stripe(0.55, 0.79, cx - 0.07 * ph, 0.065), cx - 0.07 * ph, 0.065 * ph),
        (5, stripe(0.55, 0.79, cx + 0.07 * ph, 0.065), cx + 0.07 * ph, 0.065 * ph),
        (6, stripe(0.79, 1.0, cx - 0.07 * ph, 0.065), cx - 0.07 * ph, 0.065 * ph),
        (6, stripe(0.79, 1.0, cx + 0.07 * ph, 0.065), cx + 0.07 * ph, 0.065 * ph),
    ]
    for part_id, mask, x_c, half_w in segments:
        normals = _cyl_normal_x(xx, x_c, half_w)
        cv.paint(mask, pal.CLASS_PERSON, normals, color, part=part_id)


_KIND_PAINTERS = [_add_person, _add_sphere, _add_vehicle, _add_box]


def generate_scene(seed: int, h: int, w: int, ensure_all_kinds: bool = False) -> SyntheticScene:
    """Deterministic scene per seed; 2-6 primitives, painter's order.

    ensure_all_kinds forces at least one primitive of each of the four
    object kinds (useful for tiny fixed training sets).
    """
    if h < 32 or w < 32:
        raise ValueError("scenes must be at least 32x32")
    rng = np.random.default_rng(seed)
    cv = _Canvas(h, w)

    # background: smooth deterministic gradient
    gdir = rng.uniform(-1, 1, size=2)
    grad = (gdir[0] * cv.yy / h + gdir[1] * cv.xx / w) * 0.15 + rng.uniform(0.25, 0.45)
    for c in range(3):
        cv.albedo[c] = grad * rng.uniform(0.8, 1.2)

    n_prim = rng.integers(4 if ensure_all_kinds else 2, 7)
    kinds = list(rng.integers(0, 4, size=n_prim))
    if ensure_all_kinds:
        kinds[:4] = [0, 1, 2, 3]
        rng.shuffle(kinds)
    for kind in kinds:
        _KIND_PAINTERS[kind](cv, rng)

    light = rng.uniform(-0.4, 0.4, size=3) + np.array([0.0, 0.0, 1.0])
    light /= np.linalg.norm(light)
    shade = np.clip((cv.normals * light[:, None, None]).sum(axis=0), 0.0, 1.0)
    image = np.clip(cv.albedo * (0.35 + 0.65 * shade), 0.0, 1.0).astype(np.float32)

    lut = np.zeros(pal.NUM_CLASSES, dtype=np.uint8)
    for cls, lab in SEG_LABEL_OF_CLASS.items():
        lut[cls] = lab
    norms = np.linalg.norm(cv.normals, axis=0, keepdims=True)
    return SyntheticScene(
        image=image,
        semantics=cv.semantics,
        segmentation=lut[cv.semantics],
        parts=cv.parts,
        normals=(cv.normals / norms).astype(np.float32),
        edges=semantic_boundary(cv.semantics),
        saliency=(cv.semantics > 0).astype(np.uint8),
    )


def make_dataset(n: int, h: int, w: int, base_seed: int = 0, ensure_all_kinds: bool = False) -> list:
    return [generate_scene(base_seed + i, h, w, ensure_all_kinds) for i in range(n)]


def scenes_to_labels(scenes: list) -> LabelSet:
    """Stack per-scene ground truth into a batched LabelSet (all pixels valid)."""
    return LabelSet(
        segmentation=np.stack([s.segmentation.astype(np.int64) for s in scenes]),
        parts=np.stack([s.parts.astype(np.int64) for s in scenes]),
        normals=np.stack([s.normals for s in scenes]),
        edges=np.stack([s.edges for s in scenes]),
        saliency=np.stack([s.saliency for s in scenes]),
    )


def sparsify_labels(labels: LabelSet, palette: np.ndarray) -> LabelSet:
    """Restrict each task's validity to the pixels where the palette requests it."""
    n = labels.segmentation.shape[0]
    if palette.ndim == 2:
        palette = np.broadcast_to(palette, (n,) + palette.shape)
    valid = {k: labels.valid[k] & (palette == k) for k in labels.valid}
    return LabelSet(
        segmentation=labels.segmentation,
        parts=labels.parts,
        normals=labels.normals,
        edges=labels.edges,
        saliency=labels.saliency,
        valid=valid,
    )


def _flip_scene_arrays(image, labels: LabelSet, idx: int):
    image[idx] = image[idx][:, :, ::-1].copy()
    labels.segmentation[idx] = labels.segmentation[idx][:, ::-1].copy()
    labels.parts[idx] = labels.parts[idx][:, ::-1].copy()
    labels.edges[idx] = labels.edges[idx][:, ::-1].copy()
    labels.saliency[idx] = labels.saliency[idx][:, ::-1].copy()


def batch_iter(scenes, rule: pal.RuleSpec, batch_size: int, rng, flip: bool = False):
    """One epoch of (image Tensor, palette (B,H,W), LabelSet) batches.

    Order is deterministic per rng; mosaic/random palettes are resampled per
    batch. Horizontal flip is skipped whenever the palette requests surface
    normals anywhere in the batch.
    """
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    order = rng.permutation(len(scenes))
    for lo in range(0, len(scenes), batch_size):
        chunk = [scenes[i] for i in order[lo : lo + batch_size]]
        h, w = chunk[0].shape
        if rule.needs_semantics:
            palettes = np.stack([pal.gen_palette(rule, h, w, s.semantics, rng) for s in chunk])
        else:
            p = pal.gen_palette(rule, h, w, rng=rng)
            palettes = np.broadcast_to(p, (len(chunk), h, w)).copy()
        image = np.stack([s.image for s in chunk]).copy()
        labels = scenes_to_labels(chunk)
        if flip and not (palettes == pal.TASK_NORMALS).any():
            for i in range(len(chunk)):
                if rng.random() < 0.5:
                    _flip_scene_arrays(image, labels, i)
                    palettes[i] = palettes[i][:, ::-1]
        labels = sparsify_labels(labels, palettes)
        yield Tensor(np.ascontiguousarray(image)), palettes, labels
