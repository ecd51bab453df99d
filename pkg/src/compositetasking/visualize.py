"""Rendering of 3-channel composite outputs into viewable images.

Each task has its own convention: segmentation and parts decode to the
nearest anchor and show that anchor's color, edges and saliency show the
mean per-channel sigmoid as grayscale, and normals map unit vectors to RGB
via (n + 1) / 2. The composite render applies, at every pixel, the
convention of the task its palette requests.
"""

from __future__ import annotations

import io

import numpy as np

from . import losses, palette as pal


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def render_anchor_task(out: np.ndarray, task: str) -> np.ndarray:
    """(3, H, W) output -> (H, W, 3) u8 anchor colors for "segmentation"/"parts"."""
    anchors = losses.anchor_table(task)
    ids = losses.decode_class(np.moveaxis(out, 0, -1), anchors)
    return _to_u8(anchors[ids])


def render_grayscale(out: np.ndarray) -> np.ndarray:
    """(3, H, W) output -> (H, W, 3) u8: mean of per-channel sigmoids."""
    g = _sigmoid(out).mean(axis=0)
    return _to_u8(np.repeat(g[:, :, None], 3, axis=2))


def render_normals(out: np.ndarray) -> np.ndarray:
    """(3, H, W) output -> (H, W, 3) u8: unit vector mapped to (n + 1) / 2."""
    norm = np.linalg.norm(out, axis=0, keepdims=True)
    unit = out / np.maximum(norm, 1e-8)
    return _to_u8(np.moveaxis((unit + 1.0) / 2.0, 0, -1))


_TASK_RENDERERS = {
    pal.TASK_EDGES: render_grayscale,
    pal.TASK_SEGMENTATION: lambda o: render_anchor_task(o, "segmentation"),
    pal.TASK_PARTS: lambda o: render_anchor_task(o, "parts"),
    pal.TASK_NORMALS: render_normals,
    pal.TASK_SALIENCY: render_grayscale,
}


def render_task(out: np.ndarray, task: int) -> np.ndarray:
    """Render a (3, H, W) output under one task's convention -> (H, W, 3) u8."""
    return _TASK_RENDERERS[task](out)


def render_composite(out: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Per-pixel render: each pixel drawn by the task its palette requests."""
    if out.shape[1:] != palette.shape:
        raise ValueError(f"output size {out.shape[1:]} != palette size {palette.shape}")
    img = np.zeros(palette.shape + (3,), dtype=np.uint8)
    for task in np.unique(palette):
        mask = palette == task
        img[mask] = render_task(out, int(task))[mask]
    return img


def palette_legend(num_tasks: int = pal.NUM_TASKS) -> list:
    """Display colors per task id, drawn from the anchor tables so renders
    and legends agree."""
    seg = losses.anchor_class_colors("segmentation")
    parts = losses.anchor_class_colors("parts")
    colors = {
        pal.TASK_EDGES: [255, 255, 255],
        pal.TASK_SEGMENTATION: seg[20]["rgb"],  # person anchor
        pal.TASK_PARTS: parts[1]["rgb"],  # head anchor
        pal.TASK_NORMALS: [128, 128, 255],  # straight-on normal, RGB-mapped
        pal.TASK_SALIENCY: [128, 128, 128],
    }
    return [
        {"id": k, "name": pal.TASK_NAMES[k], "color": list(colors[k])}
        for k in range(num_tasks)
    ]


def render_palette(palette: np.ndarray) -> np.ndarray:
    """Colorize a palette for display using the legend colors."""
    table = np.asarray([e["color"] for e in palette_legend()], dtype=np.uint8)
    return table[palette]


def to_png_bytes(rgb: np.ndarray) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(data: bytes) -> np.ndarray:
    """Decode a PNG into a (3, H, W) float32 image in [0, 1]."""
    from PIL import Image

    img = Image.open(io.BytesIO(data)).convert("RGB")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return np.moveaxis(arr, -1, 0)


def image_to_png_bytes(image: np.ndarray) -> bytes:
    """Encode a (3, H, W) float image in [0, 1] as PNG."""
    return to_png_bytes(_to_u8(np.moveaxis(image, 0, -1)))
