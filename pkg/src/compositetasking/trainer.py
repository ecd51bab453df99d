"""Training loops: Adam with decoupled weight decay, plateau LR schedule,
rule-transfer fine-tuning, palette-predictor training, and evaluation.

Batches are seeded deterministically per (run seed, epoch), so resuming
from any per-epoch checkpoint reproduces the exact parameter trajectory of
an uninterrupted run.
"""

from __future__ import annotations

import gc
import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import losses, metrics, palette as pal, synth
from .autodiff import Tensor
from .losses import LossWeights, composite_loss
from .network import ModelBundle, ModelConfig, build_model

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; carries the batch seed."""

    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch}, batch {batch} "
            f"(batch seed ({epoch}, {batch}))"
        )
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    """Optimization settings; model settings live in ModelConfig."""

    variant: str = "ctn"
    rule: str = "r1r"
    rule_task: int | None = None  # constant task for rule "s"
    epochs: int = 100
    batch_size: int = 10
    lr_encoder: float = 1e-3  # 1e-5 matches the published large-scale setup
    lr_decoder: float = 1e-3
    weight_decay: float = 1e-5
    plateau_factor: float = 0.3
    plateau_patience: int = 12
    grad_clip: float | None = None  # max global gradient norm; None disables
    seed: int = 0
    checkpoint_dir: str | None = None
    log_path: str | None = None
    n_scenes: int = 16
    height: int = 64
    width: int = 64
    flip: bool = False
    eval_every: int = 0  # 0 = metrics only in the final log entry

    def __post_init__(self):
        if self.lr_encoder <= 0 or self.lr_decoder <= 0:
            raise ValueError("learning rates must be positive")
        if self.plateau_patience < 1:
            raise ValueError("plateau patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    def make_rule(self) -> pal.RuleSpec:
        if self.rule == "s":
            return pal.RuleSpec("s", task=self.rule_task)
        if self.rule == "r1r":
            return pal.RuleSpec("r1r", distinct_tasks=True)
        return pal.RuleSpec(self.rule)

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adam over named parameters, with weight decay applied directly to
    the weights (not through the gradient moments). Parameters are split
    into encoder/decoder groups by name so the two can use different
    learning rates."""

    def __init__(self, params: dict, weight_decay: float = 0.0):
        self.params = params
        self.weight_decay = weight_decay
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.t = 0

    @staticmethod
    def group_of(name: str) -> str:
        return "enc" if name.startswith("enc.") or ".enc." in name else "dec"

    def step(self, lr_enc: float, lr_dec: float):
        self.t += 1
        c1 = 1.0 - ADAM_BETA1**self.t
        c2 = 1.0 - ADAM_BETA2**self.t
        for n, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            lr = lr_enc if self.group_of(n) == "enc" else lr_dec
            self.m[n] = ADAM_BETA1 * self.m[n] + (1 - ADAM_BETA1) * g
            self.v[n] = ADAM_BETA2 * self.v[n] + (1 - ADAM_BETA2) * np.square(g)
            update = (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + ADAM_EPS)
            p.data -= (lr * update).astype(p.data.dtype)
            if self.weight_decay:
                p.data -= (lr * self.weight_decay * p.data).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def clip_grads(self, max_norm: float):
        """Rescale all gradients so their global L2 norm is at most
        `max_norm`. The per-pixel inverse-distance scores can produce rare
        million-scale gradient spikes near anchors; unclipped, one spike
        poisons the second-moment estimate and freezes learning for
        thousands of steps."""
        sq = 0.0
        for p in self.params.values():
            if p.grad is not None:
                sq += float(np.sum(np.square(p.grad)))
        norm = np.sqrt(sq)
        if norm > max_norm:
            scale = max_norm / norm
            for p in self.params.values():
                if p.grad is not None:
                    p.grad *= scale

    def state_tensors(self) -> dict:
        out = {}
        for n in self.params:
            out[f"opt.m.{n}"] = self.m[n]
            out[f"opt.v.{n}"] = self.v[n]
        return out

    def load_state_tensors(self, tensors: dict):
        for n in self.params:
            self.m[n] = tensors[f"opt.m.{n}"].astype(self.m[n].dtype).reshape(self.m[n].shape)
            self.v[n] = tensors[f"opt.v.{n}"].astype(self.v[n].dtype).reshape(self.v[n].shape)


@dataclass
class Schedule:
    """Multiply both learning rates by `factor` after `patience` epochs
    without a strictly lower epoch-mean loss, then reset the counter."""

    lr_enc: float
    lr_dec: float
    factor: float
    patience: int
    best: float = float("inf")
    bad_epochs: int = 0

    def update(self, epoch_loss: float):
        if epoch_loss < self.best:
            self.best = epoch_loss
            self.bad_epochs = 0
            return
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr_enc *= self.factor
            self.lr_dec *= self.factor
            self.bad_epochs = 0


def _log_write(path, entry: dict):
    if path:
        with open(path, "a") as f:
            f.write(json.dumps(entry) + "\n")


def _checkpoint_state(epoch: int, sched: Schedule, opt: Adam, cfg: TrainConfig) -> dict:
    return {
        "epoch": epoch,
        "step": opt.t,
        "lr_enc": sched.lr_enc,
        "lr_dec": sched.lr_dec,
        "best": sched.best if np.isfinite(sched.best) else None,
        "bad_epochs": sched.bad_epochs,
        "train_config": cfg.to_dict(),
    }


def _save_epoch(bundle: ModelBundle, opt: Adam, sched: Schedule, cfg: TrainConfig, epoch: int):
    if not cfg.checkpoint_dir:
        return
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    path = os.path.join(cfg.checkpoint_dir, f"epoch-{epoch:04d}.ckpt")
    tensors = bundle.named_tensors()
    tensors.update(opt.state_tensors())
    from . import cttn

    cttn.save_checkpoint(path, tensors, bundle.config.to_dict(), _checkpoint_state(epoch, sched, opt, cfg))


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def train(
    cfg: TrainConfig,
    model_config: ModelConfig | None = None,
    bundle: ModelBundle | None = None,
    scenes: list | None = None,
    resume: str | None = None,
    weights: LossWeights | None = None,
):
    """Optimize a model on procedurally generated scenes.

    Returns (bundle, log), where log is the list of per-epoch entries that
    also land in cfg.log_path as JSON lines.
    """
    if bundle is None:
        model_config = model_config or ModelConfig(
            variant=cfg.variant, height=cfg.height, width=cfg.width, seed=cfg.seed
        )
        bundle = ModelBundle(model_config)
    if bundle.config.variant != "ctn":
        raise ValueError("the composite trainer optimizes the task-composed network; "
                         "use train_palette_predictor for the palette predictor")
    rule = cfg.make_rule()
    if scenes is None:
        scenes = synth.make_dataset(
            cfg.n_scenes, cfg.height, cfg.width, base_seed=cfg.seed, ensure_all_kinds=True
        )
    opt = Adam(bundle.model.params(), cfg.weight_decay)
    sched = Schedule(cfg.lr_encoder, cfg.lr_decoder, cfg.plateau_factor, cfg.plateau_patience)
    start_epoch = 0

    if resume:
        from . import cttn

        tensors, _, state = cttn.load_checkpoint(resume)
        model_tensors = {n: t for n, t in tensors.items() if not n.startswith("opt.")}
        bundle.load_tensors(model_tensors)
        opt.load_state_tensors(tensors)
        opt.t = state["step"]
        sched.lr_enc, sched.lr_dec = state["lr_enc"], state["lr_dec"]
        sched.best = state["best"] if state["best"] is not None else float("inf")
        sched.bad_epochs = state["bad_epochs"]
        start_epoch = state["epoch"] + 1

    log = []
    t_start = time.time()
    for epoch in range(start_epoch, cfg.epochs):
        rng = _epoch_rng(cfg.seed, epoch)
        epoch_loss, n_batches = 0.0, 0
        for b, (image, palettes, labels) in enumerate(
            synth.batch_iter(scenes, rule, cfg.batch_size, rng, flip=cfg.flip)
        ):
            opt.zero_grad()
            out = bundle.model.forward(image, palettes, training=True)
            loss, _ = composite_loss(out, labels, palettes, weights)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, b, value)
            loss.backward()
            if cfg.grad_clip is not None:
                opt.clip_grads(cfg.grad_clip)
            opt.step(sched.lr_enc, sched.lr_dec)
            epoch_loss += value
            n_batches += 1
        gc.collect()  # drop any graph garbage before the next epoch's peak
        epoch_loss /= max(n_batches, 1)
        sched.update(epoch_loss)
        entry = {
            "epoch": epoch,
            "loss": epoch_loss,
            "lr_enc": sched.lr_enc,
            "lr_dec": sched.lr_dec,
            "metrics": {},
            "elapsed_s": round(time.time() - t_start, 3),
        }
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            entry["metrics"] = evaluate(bundle, rule, scenes, seed=cfg.seed).to_dict()
        log.append(entry)
        _log_write(cfg.log_path, entry)
        _save_epoch(bundle, opt, sched, cfg, epoch)
    return bundle, log


def finetune(
    bundle: ModelBundle,
    new_rule: pal.RuleSpec,
    cfg: TrainConfig,
    scenes: list | None = None,
    eval_scenes: list | None = None,
):
    """Continue optimizing an already-trained network under a new palette
    rule. The evaluation under the new rule is recorded before any update
    (the no-fine-tuning reference point).

    Returns (bundle, log, pre_eval) where pre_eval is a MetricsReport.
    """
    if bundle.config.variant != "ctn":
        raise ValueError("fine-tuning applies to the task-composed network only")
    if new_rule.num_tasks != bundle.config.k:
        raise ValueError(
            f"rule uses {new_rule.num_tasks} tasks but the network was built for {bundle.config.k}"
        )
    if eval_scenes is None:
        eval_scenes = scenes or synth.make_dataset(
            cfg.n_scenes, cfg.height, cfg.width, base_seed=cfg.seed + 10_000, ensure_all_kinds=True
        )
    pre_eval = evaluate(bundle, new_rule, eval_scenes, seed=cfg.seed)
    ft_cfg = TrainConfig(**{**cfg.to_dict(), "rule": new_rule.variant, "rule_task": new_rule.task})
    bundle, log = train(ft_cfg, bundle=bundle, scenes=scenes)
    return bundle, log, pre_eval


def composite_loss_on(bundle: ModelBundle, rule: pal.RuleSpec, scenes: list, seed: int = 0,
                      batch_size: int = 8) -> float:
    """Mean composite loss over a scene set with deterministic palettes."""
    from . import autodiff as ad

    rng = np.random.default_rng([seed, 777])
    total, n = 0.0, 0
    with ad.no_grad():
        for image, palettes, labels in synth.batch_iter(scenes, rule, batch_size, rng):
            out = bundle.model.forward(image, palettes, training=False)
            loss, _ = composite_loss(out, labels, palettes)
            total += loss.item()
            n += 1
    return total / max(n, 1)


# -- evaluation ---------------------------------------------------------------


def _forward_for_task(model, image: Tensor, task: int, palettes: np.ndarray):
    """Model output used for a given task: palette-driven for the composed
    network, the task's own head for the baselines."""
    if hasattr(model, "palette_embedding"):  # task-composed network
        return model.forward(image, palettes, training=False)
    return model.forward(image, task, training=False)


def _edge_prob(out: np.ndarray) -> np.ndarray:
    """(N, H, W) probability map: mean of the 3 per-channel sigmoids."""
    return (1.0 / (1.0 + np.exp(-out))).mean(axis=1)


def evaluate(
    bundle: ModelBundle,
    rule: pal.RuleSpec,
    scenes: list,
    seed: int = 0,
    batch_size: int = 8,
) -> metrics.MetricsReport:
    """Per-task metrics. Under the single-task rule each task is evaluated
    with a uniform palette over the whole set; under composite rules each
    task is scored only on the pixels its palette requests."""
    model = bundle.model
    labels_all = synth.scenes_to_labels(scenes)
    h, w = scenes[0].shape
    n = len(scenes)
    rng = np.random.default_rng([seed, 999])
    if rule.variant == "s":
        palettes = None  # per-task uniform palettes below
    elif rule.needs_semantics:
        palettes = np.stack([pal.gen_palette(rule, h, w, s.semantics, rng) for s in scenes])
    else:
        palettes = np.stack([pal.gen_palette(rule, h, w, rng=rng) for _ in scenes])

    seg_anchors = losses.anchor_table("segmentation")
    parts_anchors = losses.anchor_table("parts")
    report = metrics.MetricsReport()

    for task in range(rule.num_tasks):
        if palettes is None:
            task_pal = np.full((n, h, w), task, dtype=np.uint8)
            valid = np.ones((n, h, w), dtype=bool)
        else:
            task_pal = palettes
            valid = palettes == task
            if not valid.any():
                report.set(task, None)
                continue
        from . import autodiff as ad

        outs = []
        with ad.no_grad():
            for lo in range(0, n, batch_size):
                image = Tensor(np.stack([s.image for s in scenes[lo : lo + batch_size]]))
                out = _forward_for_task(model, image, task, task_pal[lo : lo + batch_size])
                outs.append(out.data)
        out = np.concatenate(outs, axis=0)

        if task == pal.TASK_SEGMENTATION:
            pred = losses.decode_class(np.moveaxis(out, 1, -1), seg_anchors)
            report.set(task, metrics.miou(pred, labels_all.segmentation, valid, len(seg_anchors)))
        elif task == pal.TASK_PARTS:
            pred = losses.decode_class(np.moveaxis(out, 1, -1), parts_anchors)
            report.set(task, metrics.miou(pred, labels_all.parts, valid, len(parts_anchors)))
        elif task == pal.TASK_EDGES:
            prob = _edge_prob(out)
            scores = [
                metrics.boundary_f(prob[i], labels_all.edges[i], valid[i]) for i in range(n)
            ]
            report.set(task, float(np.mean(scores)))
        elif task == pal.TASK_SALIENCY:
            prob = _edge_prob(out)
            report.set(task, metrics.saliency_max_miou(prob, labels_all.saliency, valid))
        else:  # normals
            norm = np.linalg.norm(out, axis=1, keepdims=True)
            unit = out / np.maximum(norm, 1e-8)
            report.set(task, metrics.mean_angular_error(unit, labels_all.normals, valid))
    return report


# -- palette predictor --------------------------------------------------------


def _palette_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over (N, K, H, W) logits and integer targets."""
    from . import autodiff as ad

    n, k, h, w = logits.shape
    probs = ad.softmax(logits, axis=1)
    onehot = np.zeros((n, k, h, w), dtype=logits.dtype.type)
    ni, yi, xi = np.indices(target.shape)
    onehot[ni, target, yi, xi] = 1.0
    picked = (probs * Tensor(onehot)).sum(axis=1)
    return -(ad.log(ad.clip_min(picked, 1e-12))).mean()


def train_palette_predictor(
    cfg: TrainConfig,
    model_config: ModelConfig | None = None,
    scenes: list | None = None,
    eval_scenes: list | None = None,
):
    """Train the plain encoder-decoder that maps an image to palette
    logits, supervised by rule-generated palettes. The rule must be
    semantics-driven, otherwise the palette is unpredictable from the image.

    Returns (bundle, log); the final log entry carries the held-out
    palette mIoU.
    """
    rule = cfg.make_rule()
    if not rule.needs_semantics:
        raise ValueError(f"rule {rule.variant!r} has no semantic definition to learn from")
    model_config = model_config or ModelConfig(
        variant="palette_predictor", height=cfg.height, width=cfg.width, seed=cfg.seed
    )
    if model_config.variant != "palette_predictor":
        raise ValueError("model config must use the palette_predictor variant")
    bundle = ModelBundle(model_config)
    if scenes is None:
        scenes = synth.make_dataset(
            cfg.n_scenes, cfg.height, cfg.width, base_seed=cfg.seed, ensure_all_kinds=True
        )
    opt = Adam(bundle.model.params(), cfg.weight_decay)
    sched = Schedule(cfg.lr_encoder, cfg.lr_decoder, cfg.plateau_factor, cfg.plateau_patience)

    log = []
    for epoch in range(cfg.epochs):
        rng = _epoch_rng(cfg.seed, epoch)
        order = rng.permutation(len(scenes))
        epoch_loss, n_batches = 0.0, 0
        for lo in range(0, len(scenes), cfg.batch_size):
            chunk = [scenes[i] for i in order[lo : lo + cfg.batch_size]]
            image = Tensor(np.stack([s.image for s in chunk]))
            target = np.stack(
                [pal.gen_palette(rule, *s.shape, s.semantics) for s in chunk]
            ).astype(np.int64)
            opt.zero_grad()
            logits = bundle.model.forward(image, training=True)
            loss = _palette_cross_entropy(logits, target)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, lo // cfg.batch_size, value)
            loss.backward()
            if cfg.grad_clip is not None:
                opt.clip_grads(cfg.grad_clip)
            opt.step(sched.lr_enc, sched.lr_dec)
            epoch_loss += value
            n_batches += 1
        epoch_loss /= max(n_batches, 1)
        sched.update(epoch_loss)
        entry = {"epoch": epoch, "loss": epoch_loss, "lr_enc": sched.lr_enc,
                 "lr_dec": sched.lr_dec, "metrics": {}}
        log.append(entry)
        _log_write(cfg.log_path, entry)

    if eval_scenes is not None and log:
        log[-1]["metrics"] = {
            "palette_miou": palette_predictor_miou(bundle, rule, eval_scenes)
        }
        _log_write(cfg.log_path, log[-1])
    return bundle, log


def palette_predictor_miou(bundle: ModelBundle, rule: pal.RuleSpec, scenes: list) -> float:
    """Mean IoU between predicted and rule-generated palettes."""
    image = Tensor(np.stack([s.image for s in scenes]))
    pred = bundle.model.predict_palette(image)
    gt = np.stack([pal.gen_palette(rule, *s.shape, s.semantics) for s in scenes]).astype(np.int64)
    return metrics.miou(pred.astype(np.int64), gt, None, rule.num_tasks)
