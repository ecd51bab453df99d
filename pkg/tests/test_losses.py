"""Anchor embedding decode/score oracles, per-task losses, and the masked
composite loss."""

import numpy as np
import pytest

from compositetasking import losses, palette as pal
from compositetasking.autodiff import Tensor
from compositetasking.losses import (
    LabelSet,
    LossWeights,
    anchor_probs,
    anchor_scores,
    anchor_table,
    composite_loss,
    decode_class,
    focal_loss,
    saliency_class_weights,
)


def test_anchor_tables_shapes_and_range():
    seg = anchor_table("segmentation")
    parts = anchor_table("parts")
    assert seg.shape == (21, 3) and parts.shape == (7, 3)
    for t in (seg, parts):
        assert t.min() >= 0.0 and t.max() <= 1.0
    # background anchors sit at the origin
    assert np.array_equal(seg[0], [0, 0, 0])
    assert np.array_equal(parts[0], [0, 0, 0])


def test_known_anchor_values():
    seg = anchor_table("segmentation")
    assert np.allclose(seg[1] * 255, [0, 0, 64])  # cat
    assert np.allclose(seg[20] * 255, [128, 128, 192])  # person
    parts = anchor_table("parts")
    assert np.allclose(parts[1] * 255, [0, 0, 255])  # head


@pytest.mark.parametrize("task", ["segmentation", "parts"])
def test_decode_matches_brute_force(task):
    anchors = anchor_table(task)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.5, 1.5, size=(10_000, 3)).astype(np.float32)
    got = decode_class(pts, anchors)
    brute = np.array(
        [min(range(len(anchors)), key=lambda i: np.linalg.norm(p - anchors[i])) for p in pts]
    )
    assert np.array_equal(got, brute)


def test_decode_ties_take_lowest_index():
    anchors = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=np.float32)
    exact_tie = np.array([[0.5, 0.0, 0.0]])  # equidistant from 0 and 1
    assert decode_class(exact_tie, anchors)[0] == 0
    pair_tie = np.array([[0.8, 0.8, 0.0]])  # equidistant from 1 and 2 only
    assert decode_class(pair_tie, anchors)[0] == 1


@pytest.mark.parametrize("task", ["segmentation", "parts"])
def test_argmax_probs_equals_decode(task):
    anchors = anchor_table(task)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.5, 1.5, size=(2000, 3)).astype(np.float32)
    probs = anchor_probs(anchor_scores(pts, anchors))
    assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-5)
    assert np.array_equal(probs.argmax(axis=-1), decode_class(pts, anchors))


def test_anchor_scores_formula():
    anchors = np.array([[0.0, 0, 0], [1, 1, 1]], dtype=np.float32)
    o = np.array([0.5, 0.5, 0.5])
    s = anchor_scores(o, anchors, eps=1e-3)
    d = np.sqrt(0.75)
    assert np.allclose(s, [1 / (d + 1e-3), 1 / (d + 1e-3)])
    with pytest.raises(ValueError):
        anchor_scores(o, anchors, eps=0.0)


def test_focal_loss_reference_values():
    # perfect confidence costs ~0; gamma damps well-classified examples
    assert focal_loss(np.array([0.0, 1.0]), 1, 2.0) < 1e-9
    p = np.array([0.25, 0.75])
    expect = -((1 - 0.75) ** 2) * np.log(0.75)
    assert np.isclose(focal_loss(p, 1, 2.0), expect)
    assert focal_loss(p, 0, 2.0) > focal_loss(p, 1, 2.0)


def test_saliency_class_weights():
    w_pos, w_neg = saliency_class_weights(0.25)
    assert np.isclose(w_pos + w_neg, 1.0)
    assert np.isclose(w_pos / w_neg, 3.0)  # inverse frequency 4 : 4/3
    assert saliency_class_weights(0.0) == (0.5, 0.5)
    assert saliency_class_weights(1.0) == (0.5, 0.5)


def test_loss_weight_defaults_and_validation():
    w = LossWeights()
    assert w.lambdas[pal.TASK_EDGES] == 50.0
    assert w.lambdas[pal.TASK_SEGMENTATION] == 3.0
    assert w.lambdas[pal.TASK_PARTS] == 4.0
    assert w.lambdas[pal.TASK_SALIENCY] == 8.0
    assert w.lambdas[pal.TASK_NORMALS] == 4.0
    assert w.focal_gamma == 2.0 and w.edge_pos_weight == 0.95
    with pytest.raises(ValueError):
        LossWeights(lambdas={0: -1.0})


def _random_labels(rng, n, h, w):
    return LabelSet(
        segmentation=rng.integers(0, 21, size=(n, h, w)),
        parts=rng.integers(0, 7, size=(n, h, w)),
        normals=_unit(rng.standard_normal((n, 3, h, w))),
        edges=rng.integers(0, 2, size=(n, h, w)),
        saliency=rng.integers(0, 2, size=(n, h, w)),
    )


def _unit(v):
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_masked_gradient_is_zero_outside_task_masks():
    rng = np.random.default_rng(0)
    n, h, w = 2, 6, 6
    labels = _random_labels(rng, n, h, w)
    palette = rng.integers(0, 5, size=(n, h, w)).astype(np.uint8)
    output = Tensor(rng.standard_normal((n, 3, h, w)), requires_grad=True)
    total, per_task = composite_loss(output, labels, palette)
    total.backward()
    # every pixel is requested by exactly one task, so all have gradient
    assert (np.abs(output.grad).sum(axis=1) > 0).all()
    # restrict to one task: gradient vanishes exactly off its mask
    for task in range(5):
        out2 = Tensor(output.data.copy(), requires_grad=True)
        only = labels.valid.copy()
        sparse = LabelSet(labels.segmentation, labels.parts, labels.normals,
                          labels.edges, labels.saliency,
                          valid={k: only[k] & (k == task) for k in only})
        t2, _ = composite_loss(out2, sparse, palette)
        if t2.item() == 0.0:
            continue
        t2.backward()
        off_mask = palette != task
        assert (np.abs(out2.grad).sum(axis=1)[off_mask] == 0).all()


def test_labels_outside_masks_never_read():
    # poison every label outside each task's mask; the loss must not change
    rng = np.random.default_rng(1)
    n, h, w = 2, 8, 8
    labels = _random_labels(rng, n, h, w)
    palette = rng.integers(0, 5, size=(n, h, w)).astype(np.uint8)
    output = Tensor(rng.standard_normal((n, 3, h, w)))
    ref, _ = composite_loss(output, labels, palette)

    poisoned = _random_labels(rng, n, h, w)  # different everywhere
    mixed = LabelSet(
        segmentation=np.where(palette == pal.TASK_SEGMENTATION, labels.segmentation, poisoned.segmentation),
        parts=np.where(palette == pal.TASK_PARTS, labels.parts, poisoned.parts),
        normals=np.where((palette == pal.TASK_NORMALS)[:, None], labels.normals, poisoned.normals),
        edges=np.where(palette == pal.TASK_EDGES, labels.edges, poisoned.edges),
        saliency=np.where(palette == pal.TASK_SALIENCY, labels.saliency, poisoned.saliency),
    )
    got, _ = composite_loss(output, mixed, palette)
    assert got.item() == ref.item()


def test_composite_loss_weights_applied():
    rng = np.random.default_rng(2)
    n, h, w = 1, 4, 4
    labels = _random_labels(rng, n, h, w)
    output = Tensor(rng.standard_normal((n, 3, h, w)))
    palette = np.full((n, h, w), pal.TASK_EDGES, dtype=np.uint8)
    total, per_task = composite_loss(output, labels, palette)
    assert np.isclose(total.item(), 50.0 * per_task[pal.TASK_EDGES])
    assert per_task[pal.TASK_PARTS] == 0.0


def test_empty_palette_mask_gives_zero_loss():
    rng = np.random.default_rng(3)
    labels = _random_labels(rng, 1, 4, 4)
    labels.valid = {k: np.zeros((1, 4, 4), dtype=bool) for k in range(5)}
    output = Tensor(rng.standard_normal((1, 3, 4, 4)))
    total, per_task = composite_loss(output, labels, np.zeros((1, 4, 4), dtype=np.uint8))
    assert total.item() == 0.0
    assert all(v == 0.0 for v in per_task.values())


def test_normals_loss_zero_for_perfect_prediction():
    rng = np.random.default_rng(4)
    labels = _random_labels(rng, 1, 4, 4)
    output = Tensor(labels.normals.astype(np.float32) * 2.5)  # direction is what matters
    palette = np.full((1, 4, 4), pal.TASK_NORMALS, dtype=np.uint8)
    _, per_task = composite_loss(output, labels, palette)
    assert per_task[pal.TASK_NORMALS] < 1e-6
