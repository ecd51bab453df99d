"""Command-line entry points: training, evaluation, prediction, palette
tooling, parameter counting, data generation, and the HTTP service.

Configuration comes from an optional JSON file plus flag overrides; flags
win. Exit codes: 0 success, 2 validation error, 1 runtime error. CT_HOME
sets the default directory for checkpoints and generated data.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import palette as pal, synth, trainer as trainer_mod, visualize
from .network import ModelBundle, ModelConfig, count_params
from .trainer import TrainConfig


def _home() -> str:
    return os.environ.get("CT_HOME", os.path.join(os.getcwd(), "ct-home"))


def _fail(message: str, code: int = 2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _train_config(config_path: str | None, overrides: dict) -> TrainConfig:
    base = {}
    if config_path:
        with open(config_path) as f:
            base = json.load(f)
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig(**base)
    except (TypeError, ValueError) as e:
        _fail(str(e))


class _Cli(click.Group):
    def __call__(self, *args, **kwargs):
        try:
            return super().__call__(*args, standalone_mode=False, **kwargs)
        except click.UsageError as e:
            click.echo(e.format_message(), err=True)
            sys.exit(2)
        except click.ClickException as e:
            e.show()
            sys.exit(2)
        except click.Abort:
            sys.exit(1)
        except SystemExit:
            raise
        except (ValueError, KeyError, FileNotFoundError) as e:
            _fail(str(e))
        except Exception as e:  # runtime failure
            click.echo(f"error: {e}", err=True)
            sys.exit(1)


@click.group(cls=_Cli)
def main():
    """Per-pixel task composition: one network, many dense tasks."""


_common_train = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="JSON file with TrainConfig fields; flags override it."),
    click.option("--rule", default=None, type=click.Choice(["s", "r1r", "r2", "r3", "rrnd"])),
    click.option("--task", "rule_task", type=int, default=None),
    click.option("--epochs", type=int, default=None),
    click.option("--batch-size", type=int, default=None),
    click.option("--lr-encoder", type=float, default=None),
    click.option("--lr-decoder", type=float, default=None),
    click.option("--grad-clip", type=float, default=None,
                 help="max global gradient norm (off by default)"),
    click.option("--seed", type=int, default=None),
    click.option("--n-scenes", type=int, default=None),
    click.option("--size", type=int, default=None, help="square scene size"),
    click.option("--checkpoint-dir", default=None),
    click.option("--log", "log_path", default=None),
]


def _with_options(options):
    def deco(f):
        for opt in reversed(options):
            f = opt(f)
        return f

    return deco


def _overrides(kw: dict) -> dict:
    size = kw.pop("size", None)
    if size is not None:
        kw["height"] = kw["width"] = size
    return kw


@main.command()
@_with_options(_common_train)
@click.option("--out", default=None, help="final checkpoint path")
@click.option("--variant", default=None, type=click.Choice(["ctn"]))
def train(config_path, out, **kw):
    """Train the task-composed network on procedural scenes."""
    cfg = _train_config(config_path, _overrides(kw))
    bundle, log = trainer_mod.train(cfg)
    out = out or os.path.join(_home(), "ctn.ckpt")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    bundle.save(out)
    click.echo(json.dumps({"checkpoint": out, "final_loss": log[-1]["loss"] if log else None}))


@main.command()
@_with_options(_common_train)
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--out", default=None)
def finetune(config_path, checkpoint, out, **kw):
    """Fine-tune a trained network on a new palette rule."""
    kw.setdefault("rule", None)
    cfg = _train_config(config_path, _overrides(kw))
    bundle = ModelBundle.load(checkpoint)
    rule = cfg.make_rule()
    bundle, log, pre = trainer_mod.finetune(bundle, rule, cfg)
    out = out or os.path.join(_home(), "ctn-finetuned.ckpt")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    bundle.save(out)
    click.echo(json.dumps({
        "checkpoint": out,
        "pre_finetune_metrics": pre.to_dict(),
        "final_loss": log[-1]["loss"] if log else None,
    }))


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--rule", default="s", type=click.Choice(["s", "r1r", "r2", "r3", "rrnd"]))
@click.option("--task", type=int, default=None)
@click.option("--n-scenes", type=int, default=8)
@click.option("--size", type=int, default=64)
@click.option("--seed", type=int, default=0)
def eval_cmd(checkpoint, rule, task, n_scenes, size, seed):
    """Evaluate a checkpoint; prints a per-task metrics report as JSON."""
    bundle = ModelBundle.load(checkpoint)
    spec = pal.RuleSpec(rule, task=task) if rule == "s" else pal.RuleSpec(rule)
    scenes = synth.make_dataset(n_scenes, size, size, base_seed=seed, ensure_all_kinds=True)
    report = trainer_mod.evaluate(bundle, spec, scenes, seed=seed)
    click.echo(report.to_json())


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--palette", "palette_path", type=click.Path(exists=True), default=None)
@click.option("--task", type=int, default=None, help="uniform palette task instead of a file")
@click.option("--out-dir", default=None)
def predict(checkpoint, image_path, palette_path, task, out_dir):
    """Run inference; writes the composite render, raw tensor, and overlays."""
    if (palette_path is None) == (task is None):
        _fail("provide exactly one of --palette or --task")
    bundle = ModelBundle.load(checkpoint)
    with open(image_path, "rb") as f:
        image = visualize.image_from_png_bytes(f.read())
    h, w = image.shape[1:]
    if palette_path:
        with open(palette_path, "rb") as f:
            palette = pal.palette_from_png_bytes(f.read())
        if palette.shape != (h, w):
            _fail(f"palette size {palette.shape} != image size {(h, w)}")
    else:
        if not 0 <= task < bundle.config.k:
            _fail(f"task id {task} out of range")
        palette = np.full((h, w), task, dtype=np.uint8)
    ok, report = pal.validate_palette(palette, bundle.config.k)
    if not ok:
        _fail(f"invalid palette: {report}")
    result = run_prediction(bundle, image, palette)
    out_dir = out_dir or os.path.join(_home(), "predictions")
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, blob in result.items():
        ext = "cttn" if name == "raw" else "png"
        paths[name] = os.path.join(out_dir, f"{name}.{ext}")
        with open(paths[name], "wb") as f:
            f.write(blob)
    click.echo(json.dumps(paths))


def run_prediction(bundle: ModelBundle, image: np.ndarray, palette: np.ndarray) -> dict:
    """Shared inference path for the CLI and the HTTP service.

    Returns a dict of bytes payloads: composite render, raw tensor,
    per-task overlays, and the palette echoed back.
    """
    from . import autodiff as ad, cttn
    from .autodiff import Tensor

    with ad.no_grad():
        out = bundle.model.forward(Tensor(image[None]), palette, training=False).data[0]
    blobs = {
        "composite": visualize.to_png_bytes(visualize.render_composite(out, palette)),
        "raw": cttn.write_cttn_bytes(out),
        "palette": pal.palette_to_png_bytes(palette),
    }
    for task_id, name in enumerate(pal.TASK_NAMES):
        blobs[f"overlay_{name}"] = visualize.to_png_bytes(visualize.render_task(out, task_id))
    return blobs


@main.group()
def palette():
    """Generate or validate task palettes."""


@palette.command("generate")
@click.option("--rule", required=True, type=click.Choice(["s", "r1r", "r2", "r3", "rrnd"]))
@click.option("--task", type=int, default=None)
@click.option("--size", type=int, default=64)
@click.option("--seed", type=int, default=0)
@click.option("--out", default="palette.png")
def palette_generate(rule, task, size, seed, out):
    """Write a palette PNG produced by a rule."""
    spec = pal.RuleSpec(rule, task=task) if rule == "s" else pal.RuleSpec(rule)
    semantics = None
    if spec.needs_semantics:
        semantics = synth.generate_scene(seed, size, size).semantics
    p = pal.gen_palette(spec, size, size, semantics, rng=seed)
    with open(out, "wb") as f:
        f.write(pal.palette_to_png_bytes(p))
    click.echo(json.dumps({"out": out, "histogram": pal.validate_palette(p)[1]["histogram"]}))


@palette.command("validate")
@click.argument("path", type=click.Path(exists=True))
@click.option("--k", type=int, default=pal.NUM_TASKS)
def palette_validate(path, k):
    """Check that every cell of a palette PNG holds a valid task id."""
    with open(path, "rb") as f:
        p = pal.palette_from_png_bytes(f.read())
    ok, report = pal.validate_palette(p, k)
    click.echo(json.dumps(report))
    if not ok:
        sys.exit(2)


@main.command()
@click.option("--k", type=int, default=pal.NUM_TASKS)
def params(k):
    """Print learnable-parameter counts for the three model variants."""
    counts = count_params(ModelConfig(k=k))
    click.echo(json.dumps(counts, indent=1))


@main.command()
@click.option("--n", type=int, default=8)
@click.option("--size", type=int, default=64)
@click.option("--seed", type=int, default=0)
@click.option("--out-dir", default=None)
def data(n, size, seed, out_dir):
    """Generate synthetic scenes and write their images as PNGs."""
    out_dir = out_dir or os.path.join(_home(), "scenes")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for i in range(n):
        scene = synth.generate_scene(seed + i, size, size)
        path = os.path.join(out_dir, f"scene-{seed + i:04d}.png")
        with open(path, "wb") as f:
            f.write(visualize.image_to_png_bytes(scene.image))
        written.append(path)
    click.echo(json.dumps({"out_dir": out_dir, "n": len(written)}))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--predictor", type=click.Path(exists=True), default=None,
              help="palette-predictor checkpoint enabling palette='auto'")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(checkpoint, predictor, host, port):
    """Serve the inference HTTP API."""
    import uvicorn

    from .server import create_app

    bundle = ModelBundle.load(checkpoint)
    predictor_bundle = ModelBundle.load(predictor) if predictor else None
    app = create_app(bundle, predictor_bundle)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
