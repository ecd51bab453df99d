"""Encoder-decoder networks: the task-composed network (CTN), the
single-task (STN) and multi-head (MHN) baselines, and the palette
predictor.

The encoder is unconditioned: five blocks, each halving the spatial size
(two 3x3 convs, stride 2 on the first, plain batch norm, leaky ReLU).
The CTN decoder consists solely of composition blocks and x2 bilinear
upsamplings; encoder features enter through 1x1 composition blocks in the
skip connections and are fused by channel concatenation. Baselines share
the architecture but use regular batch norm. Output is always 3 channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import cttn, palette as pal
from .autodiff import Tensor
from .conditioning import (
    LEAKY_SLOPE,
    BatchNorm2d,
    CompositionBlock,
    Conv2d,
    EmbeddingNet,
    broadcast_embedding,
    build_pyramid,
    embed_tasks,
)

VARIANTS = ("ctn", "stn", "mhn", "palette_predictor")


@dataclass
class ModelConfig:
    variant: str = "ctn"
    enc_widths: list = field(default_factory=lambda: [16, 32, 64, 96, 128])
    dec_widths: list = field(default_factory=lambda: [96, 64, 48, 32, 16])
    n_w: int = 128
    embed_hidden: int = 128
    k: int = pal.NUM_TASKS
    height: int = 64
    width: int = 64
    leaky_slope: float = LEAKY_SLOPE
    seed: int = 0

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if len(self.enc_widths) != 5 or len(self.dec_widths) != 5:
            raise ValueError("need exactly 5 encoder and 5 decoder widths")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _check_image(x: Tensor):
    if x.data.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected an Nx3xHxW image batch, got shape {x.shape}")
    if x.shape[2] % 32 or x.shape[3] % 32:
        raise ValueError(f"spatial size {x.shape[2:]}, must be multiples of 32")


class EncoderBlock:
    def __init__(self, rng, in_ch: int, out_ch: int, dtype=np.float32):
        self.conv1 = Conv2d(rng, in_ch, out_ch, 3, stride=2, dtype=dtype)
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype)
        self.conv2 = Conv2d(rng, out_ch, out_ch, 3, dtype=dtype)
        self.bn2 = BatchNorm2d(out_ch, dtype=dtype)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        x = ad.leaky_relu(self.bn1(self.conv1(x), training), LEAKY_SLOPE)
        x = ad.leaky_relu(self.bn2(self.conv2(x), training), LEAKY_SLOPE)
        return x

    def params(self):
        out = {}
        for sub in ("conv1", "bn1", "conv2", "bn2"):
            for n, p in getattr(self, sub).params().items():
                out[f"{sub}.{n}"] = p
        return out

    def stat_slots(self):
        return {
            "bn1.running_mu": (self.bn1, "running_mu"),
            "bn1.running_var": (self.bn1, "running_var"),
            "bn2.running_mu": (self.bn2, "running_mu"),
            "bn2.running_var": (self.bn2, "running_var"),
        }


class Encoder:
    def __init__(self, rng, widths, dtype=np.float32):
        chans = [3] + list(widths)
        self.blocks = [EncoderBlock(rng, chans[i], chans[i + 1], dtype) for i in range(5)]

    def __call__(self, x: Tensor, training: bool) -> list:
        feats = []
        for block in self.blocks:
            x = block(x, training)
            feats.append(x)
        return feats

    def params(self):
        return _prefix({f"block{i + 1}": b for i, b in enumerate(self.blocks)}, "params")

    def stat_slots(self):
        return _prefix({f"block{i + 1}": b for i, b in enumerate(self.blocks)}, "stat_slots")


def _prefix(children: dict, method: str) -> dict:
    out = {}
    for name, child in children.items():
        for n, v in getattr(child, method)().items():
            out[f"{name}.{n}"] = v
    return out


class CTNDecoder:
    """Composition-block decoder with 1x1 composition blocks in the skips."""

    def __init__(self, rng, enc_widths, dec_widths, n_w: int, dtype=np.float32):
        self.skips = [
            CompositionBlock(rng, enc_widths[i], enc_widths[i], n_w, k=1, dtype=dtype)
            for i in range(4)
        ]
        in_ch = enc_widths[4]
        self.ups = []
        for j in range(5):
            skip_ch = enc_widths[3 - j] if j < 4 else 0
            self.ups.append(
                CompositionBlock(rng, in_ch + skip_ch, dec_widths[j], n_w, k=3, dtype=dtype)
            )
            in_ch = dec_widths[j]
        self.out_block = CompositionBlock(rng, dec_widths[4], 3, n_w, k=3, activate=False, dtype=dtype)

    def __call__(self, feats: list, pyramid: list, training: bool) -> Tensor:
        x = feats[4]
        for j in range(5):
            n, c, h, w = x.shape
            x = ad.resize_bilinear(x, h * 2, w * 2)
            level = 4 - j
            if j < 4:
                skip = self.skips[3 - j](feats[3 - j], pyramid[level], training)
                x = ad.concat([x, skip], axis=1)
            x = self.ups[j](x, pyramid[level], training)
        return self.out_block(x, pyramid[0], training)

    def _children(self):
        kids = {f"skip{i + 1}": s for i, s in enumerate(self.skips)}
        kids.update({f"up{j + 1}": u for j, u in enumerate(self.ups)})
        kids["out"] = self.out_block
        return kids

    def params(self):
        return _prefix(self._children(), "params")

    def stat_slots(self):
        out = {}
        for name, child in self._children().items():
            out[f"{name}.running_mu"] = (child, "running_mu")
            out[f"{name}.running_var"] = (child, "running_var")
        return out


class PlainBlock:
    """conv + regular batch norm + optional leaky ReLU (baseline counterpart)."""

    def __init__(self, rng, in_ch, out_ch, k=3, activate=True, dtype=np.float32):
        self.conv = Conv2d(rng, in_ch, out_ch, k, dtype=dtype)
        self.bn = BatchNorm2d(out_ch, dtype=dtype)
        self.activate = activate

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        x = self.bn(self.conv(x), training)
        return ad.leaky_relu(x, LEAKY_SLOPE) if self.activate else x

    def params(self):
        out = {f"conv.{n}": p for n, p in self.conv.params().items()}
        out.update({f"bn.{n}": p for n, p in self.bn.params().items()})
        return out

    def stat_slots(self):
        return {
            "bn.running_mu": (self.bn, "running_mu"),
            "bn.running_var": (self.bn, "running_var"),
        }


class PlainDecoder:
    """Same topology as CTNDecoder, regular batch norm, no conditioning."""

    def __init__(self, rng, enc_widths, dec_widths, out_ch: int = 3, dtype=np.float32):
        self.skips = [
            PlainBlock(rng, enc_widths[i], enc_widths[i], k=1, dtype=dtype) for i in range(4)
        ]
        in_ch = enc_widths[4]
        self.ups = []
        for j in range(5):
            skip_ch = enc_widths[3 - j] if j < 4 else 0
            self.ups.append(PlainBlock(rng, in_ch + skip_ch, dec_widths[j], dtype=dtype))
            in_ch = dec_widths[j]
        self.out_block = PlainBlock(rng, dec_widths[4], out_ch, activate=False, dtype=dtype)

    def __call__(self, feats: list, training: bool) -> Tensor:
        x = feats[4]
        for j in range(5):
            n, c, h, w = x.shape
            x = ad.resize_bilinear(x, h * 2, w * 2)
            if j < 4:
                skip = self.skips[3 - j](feats[3 - j], training)
                x = ad.concat([x, skip], axis=1)
            x = self.ups[j](x, training)
        return self.out_block(x, training)

    def _children(self):
        kids = {f"skip{i + 1}": s for i, s in enumerate(self.skips)}
        kids.update({f"up{j + 1}": u for j, u in enumerate(self.ups)})
        kids["out"] = self.out_block
        return kids

    def params(self):
        return _prefix(self._children(), "params")

    def stat_slots(self):
        return _prefix(self._children(), "stat_slots")


class CTNetwork:
    def __init__(self, config: ModelConfig, rng, dtype=np.float32):
        self.config = config
        self.encoder = Encoder(rng, config.enc_widths, dtype)
        self.embednet = EmbeddingNet(
            rng, pal.CODE_BLOCK * config.k, config.n_w, config.embed_hidden, dtype
        )
        self.decoder = CTNDecoder(rng, config.enc_widths, config.dec_widths, config.n_w, dtype)
        self.codes = pal.all_task_codes(config.k).astype(dtype)

    def encode(self, image: Tensor, training: bool) -> list:
        _check_image(image)
        return self.encoder(image, training)

    def palette_embedding(self, palette: np.ndarray, n: int, dtype) -> Tensor:
        embeddings = embed_tasks(self.embednet, self.codes.astype(dtype), dtype)
        if palette.ndim == 2:
            palette = np.broadcast_to(palette, (n,) + palette.shape)
        return broadcast_embedding(palette, embeddings)

    def forward(self, image: Tensor, palette: np.ndarray, training: bool = False) -> Tensor:
        _check_image(image)
        n, _, h, w = image.shape
        if palette.shape[-2:] != (h, w):
            raise ValueError(f"palette size {palette.shape[-2:]} != image size {(h, w)}")
        e = self.palette_embedding(palette, n, image.dtype)
        pyramid = build_pyramid(e, levels=5)
        feats = self.encoder(image, training)
        return self.decoder(feats, pyramid, training)

    def params(self):
        out = {f"embednet.{n}": p for n, p in self.embednet.params().items()}
        out.update({f"enc.{n}": p for n, p in self.encoder.params().items()})
        out.update({f"dec.{n}": p for n, p in self.decoder.params().items()})
        return out

    def stat_slots(self):
        out = {f"enc.{n}": s for n, s in self.encoder.stat_slots().items()}
        out.update({f"dec.{n}": s for n, s in self.decoder.stat_slots().items()})
        return out

    def component_counts(self) -> dict:
        enc = sum(p.data.size for p in self.encoder.params().values())
        dec = sum(p.data.size for p in self.decoder.params().values())
        emb = sum(p.data.size for p in self.embednet.params().values())
        return {"encoder": enc, "decoder": dec, "embedding": emb, "total": enc + dec + emb}


class MultiHeadNetwork:
    """One shared encoder, one plain decoder per task."""

    def __init__(self, config: ModelConfig, rng, dtype=np.float32):
        self.config = config
        self.encoder = Encoder(rng, config.enc_widths, dtype)
        self.decoders = [
            PlainDecoder(rng, config.enc_widths, config.dec_widths, dtype=dtype)
            for _ in range(config.k)
        ]

    def encode(self, image: Tensor, training: bool) -> list:
        _check_image(image)
        return self.encoder(image, training)

    def forward(self, image: Tensor, task: int, training: bool = False) -> Tensor:
        feats = self.encode(image, training)
        return self.decoders[task](feats, training)

    def forward_all(self, image: Tensor, training: bool = False) -> list:
        # encoder features computed once, then each head decodes
        feats = self.encode(image, training)
        return [d(feats, training) for d in self.decoders]

    def params(self):
        out = {f"enc.{n}": p for n, p in self.encoder.params().items()}
        for k, dec in enumerate(self.decoders):
            out.update({f"dec{k}.{n}": p for n, p in dec.params().items()})
        return out

    def stat_slots(self):
        out = {f"enc.{n}": s for n, s in self.encoder.stat_slots().items()}
        for k, dec in enumerate(self.decoders):
            out.update({f"dec{k}.{n}": s for n, s in dec.stat_slots().items()})
        return out

    def component_counts(self) -> dict:
        enc = sum(p.data.size for p in self.encoder.params().values())
        dec = sum(p.data.size for d in self.decoders for p in d.params().values())
        return {"encoder": enc, "decoder": dec, "embedding": 0, "total": enc + dec}


class SingleTaskNetworks:
    """An independent full network per task."""

    def __init__(self, config: ModelConfig, rng, dtype=np.float32):
        self.config = config
        self.nets = []
        for _ in range(config.k):
            enc = Encoder(rng, config.enc_widths, dtype)
            dec = PlainDecoder(rng, config.enc_widths, config.dec_widths, dtype=dtype)
            self.nets.append((enc, dec))

    def forward(self, image: Tensor, task: int, training: bool = False) -> Tensor:
        _check_image(image)
        enc, dec = self.nets[task]
        return dec(enc(image, training), training)

    def params(self):
        out = {}
        for k, (enc, dec) in enumerate(self.nets):
            out.update({f"task{k}.enc.{n}": p for n, p in enc.params().items()})
            out.update({f"task{k}.dec.{n}": p for n, p in dec.params().items()})
        return out

    def stat_slots(self):
        out = {}
        for k, (enc, dec) in enumerate(self.nets):
            out.update({f"task{k}.enc.{n}": s for n, s in enc.stat_slots().items()})
            out.update({f"task{k}.dec.{n}": s for n, s in dec.stat_slots().items()})
        return out

    def component_counts(self) -> dict:
        enc = sum(
            p.data.size for e, _ in self.nets for p in e.params().values()
        )
        dec = sum(
            p.data.size for _, d in self.nets for p in d.params().values()
        )
        return {"encoder": enc, "decoder": dec, "embedding": 0, "total": enc + dec}


class PalettePredictor:
    """Plain encoder-decoder emitting K palette logits per pixel."""

    def __init__(self, config: ModelConfig, rng, dtype=np.float32):
        self.config = config
        self.encoder = Encoder(rng, config.enc_widths, dtype)
        self.decoder = PlainDecoder(rng, config.enc_widths, config.dec_widths, out_ch=config.k, dtype=dtype)

    def forward(self, image: Tensor, training: bool = False) -> Tensor:
        _check_image(image)
        return self.decoder(self.encoder(image, training), training)

    def predict_palette(self, image: Tensor) -> np.ndarray:
        with ad.no_grad():
            logits = self.forward(image, training=False)
        return logits.data.argmax(axis=1).astype(np.uint8)

    def params(self):
        out = {f"enc.{n}": p for n, p in self.encoder.params().items()}
        out.update({f"dec.{n}": p for n, p in self.decoder.params().items()})
        return out

    def stat_slots(self):
        out = {f"enc.{n}": s for n, s in self.encoder.stat_slots().items()}
        out.update({f"dec.{n}": s for n, s in self.decoder.stat_slots().items()})
        return out

    def component_counts(self) -> dict:
        enc = sum(p.data.size for p in self.encoder.params().values())
        dec = sum(p.data.size for p in self.decoder.params().values())
        return {"encoder": enc, "decoder": dec, "embedding": 0, "total": enc + dec}


_MODEL_CLASSES = {
    "ctn": CTNetwork,
    "stn": SingleTaskNetworks,
    "mhn": MultiHeadNetwork,
    "palette_predictor": PalettePredictor,
}


def build_model(config: ModelConfig, dtype=np.float32):
    rng = np.random.default_rng(config.seed)
    return _MODEL_CLASSES[config.variant](config, rng, dtype)


def count_params(config: ModelConfig) -> dict:
    """Exact learnable-parameter counts per component for each variant."""
    out = {}
    for variant in ("ctn", "stn", "mhn"):
        cfg = ModelConfig(**{**config.to_dict(), "variant": variant})
        out[variant] = build_model(cfg).component_counts()
    return out


class ModelBundle:
    """A model plus everything needed to reproduce it: config, parameters,
    running statistics, RNG seed."""

    def __init__(self, config: ModelConfig, model=None):
        self.config = config
        self.model = model if model is not None else build_model(config)

    def named_tensors(self) -> dict:
        out = {n: p.data for n, p in self.model.params().items()}
        for n, (obj, attr) in self.model.stat_slots().items():
            out[n] = getattr(obj, attr)
        return out

    def checksum(self) -> str:
        import hashlib

        digest = hashlib.sha256()
        tensors = self.named_tensors()
        for name in sorted(tensors):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())
        return digest.hexdigest()

    def save(self, path, state: dict | None = None):
        cttn.save_checkpoint(path, self.named_tensors(), self.config.to_dict(), state)

    @classmethod
    def load(cls, path) -> "ModelBundle":
        tensors, config, _ = cttn.load_checkpoint(path)
        bundle = cls(ModelConfig.from_dict(config))
        bundle.load_tensors(tensors)
        return bundle

    def load_tensors(self, tensors: dict):
        params = self.model.params()
        slots = self.model.stat_slots()
        for name, value in tensors.items():
            if name in params:
                if params[name].data.shape != value.shape:
                    raise ValueError(f"shape mismatch for {name}: {params[name].data.shape} vs {value.shape}")
                params[name].data[:] = value.astype(params[name].data.dtype)
            elif name in slots:
                obj, attr = slots[name]
                setattr(obj, attr, value.astype(getattr(obj, attr).dtype))
            else:
                raise KeyError(f"unknown tensor record {name!r}")
