"""Task identifiers, orthogonal task codes, and task-palette rules.

Canonical task order (0-based): 0 edges, 1 semantic segmentation,
2 human parts, 3 surface normals, 4 saliency.

Rules:
  S     -- one task everywhere.
  R1r   -- four axis-aligned rectangles around a random center, one task each.
  R2/R3 -- per-pixel lookup of the semantic class in a class->task table.
  Rrnd  -- i.i.d. uniform task per pixel.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

TASK_EDGES = 0
TASK_SEGMENTATION = 1
TASK_PARTS = 2
TASK_NORMALS = 3
TASK_SALIENCY = 4
NUM_TASKS = 5

TASK_NAMES = ["edges", "segmentation", "parts", "normals", "saliency"]

CODE_BLOCK = 20

# Synthetic semantic classes (stand-ins for the usual object taxonomy).
CLASS_BACKGROUND = 0
CLASS_PERSON = 1
CLASS_ANIMAL = 2
CLASS_VEHICLE = 3
CLASS_HOUSEHOLD = 4
NUM_CLASSES = 5

# Class->task tables. R2: normals on household-like objects, parts on
# person-like figures, segmentation on animal-like blobs, saliency on
# vehicle-like blobs, edges elsewhere. R3 keeps edges and parts at the same
# locations, drops segmentation entirely, and reshuffles normals/saliency
# over the remaining object classes.
RULE_R2_TABLE = {
    CLASS_BACKGROUND: TASK_EDGES,
    CLASS_PERSON: TASK_PARTS,
    CLASS_ANIMAL: TASK_SEGMENTATION,
    CLASS_VEHICLE: TASK_SALIENCY,
    CLASS_HOUSEHOLD: TASK_NORMALS,
}
RULE_R3_TABLE = {
    CLASS_BACKGROUND: TASK_EDGES,
    CLASS_PERSON: TASK_PARTS,
    CLASS_ANIMAL: TASK_SALIENCY,
    CLASS_VEHICLE: TASK_NORMALS,
    CLASS_HOUSEHOLD: TASK_NORMALS,
}


def make_task_code(k: int, num_tasks: int = NUM_TASKS) -> np.ndarray:
    """Unit-norm code with ones (scaled) on the k-th block of 20 entries."""
    if not 0 <= k < num_tasks:
        raise ValueError(f"task id {k} out of range for {num_tasks} tasks")
    z = np.zeros(CODE_BLOCK * num_tasks, dtype=np.float32)
    z[CODE_BLOCK * k : CODE_BLOCK * (k + 1)] = 1.0 / np.sqrt(CODE_BLOCK)
    return z


def all_task_codes(num_tasks: int = NUM_TASKS) -> np.ndarray:
    return np.stack([make_task_code(k, num_tasks) for k in range(num_tasks)])


@dataclass
class RuleSpec:
    """One of the palette-generating rules.

    variant: "s" | "r1r" | "r2" | "r3" | "rrnd"
    task: the constant task for "s"
    table: class->task mapping for "r2"/"r3" (filled automatically)
    distinct_tasks: whether r1r samples its four tasks without replacement
    """

    variant: str
    task: int | None = None
    table: dict | None = field(default=None, repr=False)
    distinct_tasks: bool = False
    num_tasks: int = NUM_TASKS

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant == "s" and self.task is None:
            raise ValueError("rule S needs a task id")
        if self.variant == "r2" and self.table is None:
            self.table = dict(RULE_R2_TABLE)
        if self.variant == "r3" and self.table is None:
            self.table = dict(RULE_R3_TABLE)
        if self.variant not in ("s", "r1r", "r2", "r3", "rrnd"):
            raise ValueError(f"unknown rule variant {self.variant!r}")

    @property
    def needs_semantics(self) -> bool:
        return self.variant in ("r2", "r3")


def mosaic_palette(h: int, w: int, center: tuple, tasks: tuple) -> np.ndarray:
    """Four-rectangle palette around a center, 1-based pixel coordinates."""
    cx, cy = center
    ka, kb, kc, kd = tasks
    xs = np.arange(1, w + 1)[None, :]
    ys = np.arange(1, h + 1)[:, None]
    p = np.where(
        ys <= cy,
        np.where(xs <= cx, ka, kb),
        np.where(xs <= cx, kc, kd),
    )
    return p.astype(np.uint8)


def sample_mosaic_center(h: int, w: int, rng: np.random.Generator) -> tuple:
    cx = rng.uniform(w / 4, 3 * w / 4)
    cy = rng.uniform(h / 4, 3 * h / 4)
    return cx, cy


def gen_palette(
    rule: RuleSpec,
    h: int,
    w: int,
    semantics: np.ndarray | None = None,
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    if isinstance(rng, (int, np.integer)) or rng is None:
        rng = np.random.default_rng(rng)
    k = rule.num_tasks
    if rule.variant == "s":
        return np.full((h, w), rule.task, dtype=np.uint8)
    if rule.variant == "r1r":
        center = sample_mosaic_center(h, w, rng)
        tasks = rng.choice(k, size=4, replace=not rule.distinct_tasks)
        return mosaic_palette(h, w, center, tuple(int(t) for t in tasks))
    if rule.variant == "rrnd":
        return rng.integers(0, k, size=(h, w), dtype=np.int64).astype(np.uint8)
    # semantic rules
    if semantics is None:
        raise ValueError(f"rule {rule.variant} requires a semantic class map")
    if semantics.shape != (h, w):
        raise ValueError(f"semantics shape {semantics.shape} != palette shape {(h, w)}")
    lut = np.zeros(max(rule.table) + 1, dtype=np.uint8)
    for cls, task in rule.table.items():
        lut[cls] = task
    return lut[semantics]


def validate_palette(p: np.ndarray, num_tasks: int = NUM_TASKS):
    """Returns (ok, report). The report carries a histogram, or the offending cells."""
    p = np.asarray(p)
    bad = np.argwhere(p >= num_tasks)
    if bad.size:
        return False, {
            "ok": False,
            "violations": [{"y": int(y), "x": int(x), "value": int(p[y, x])} for y, x in bad[:32]],
            "n_violations": int(bad.shape[0]),
        }
    hist = {int(t): int(n) for t, n in zip(*np.unique(p, return_counts=True))}
    return True, {"ok": True, "histogram": hist}


# -- palette file formats ---------------------------------------------------


def palette_to_png_bytes(p: np.ndarray) -> bytes:
    from PIL import Image

    img = Image.fromarray(np.asarray(p, dtype=np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def palette_from_png_bytes(data: bytes) -> np.ndarray:
    from PIL import Image

    img = Image.open(io.BytesIO(data))
    if img.mode != "L":
        img = img.convert("L")
    return np.asarray(img, dtype=np.uint8)


def palette_to_json(p: np.ndarray) -> str:
    h, w = p.shape
    return json.dumps({"h": h, "w": w, "cells": np.asarray(p, dtype=int).reshape(-1).tolist()})


def palette_from_json(text: str) -> np.ndarray:
    obj = json.loads(text)
    return np.asarray(obj["cells"], dtype=np.uint8).reshape(obj["h"], obj["w"])
