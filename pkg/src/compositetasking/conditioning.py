"""Task conditioning: embedding network, palette broadcast, embedding
pyramid, and the spatially-adaptive conditional normalization block.

The composition block normalizes its convolved features with batch
statistics and applies per-pixel affine parameters produced from the
palette embedding by a shared 1x1 conv (+ leaky ReLU) feeding two parallel
1x1 convs (gamma, beta). Gamma starts at 1 and beta at 0 so an untrained
block is plain normalization.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LEAKY_SLOPE = 0.01
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
VAR_FLOOR = 1e-24  # keeps sqrt differentiable when a channel is constant


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Linear:
    def __init__(self, rng, in_dim: int, out_dim: int, dtype=np.float32):
        self.w = Tensor(he_normal(rng, (out_dim, in_dim), in_dim, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.w, self.b)

    def params(self) -> dict:
        return {"w": self.w, "b": self.b}


class Conv2d:
    def __init__(self, rng, in_ch: int, out_ch: int, k: int, stride: int = 1, dtype=np.float32):
        fan_in = in_ch * k * k
        self.w = Tensor(he_normal(rng, (out_ch, in_ch, k, k), fan_in, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.pad = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)

    def params(self) -> dict:
        return {"w": self.w, "b": self.b}


def _batch_normalize(x: Tensor) -> Tensor:
    """(x - mu) / (sigma + eps) with differentiable batch statistics."""
    mu = x.mean(axis=(0, 2, 3), keepdims=True)
    var = (x * x).mean(axis=(0, 2, 3), keepdims=True) - mu * mu
    sigma = ad.sqrt(ad.clip_min(var, VAR_FLOOR))
    return (x - mu) / (sigma + BN_EPS)


class BatchNorm2d:
    """Regular batch normalization with a learnable per-channel affine."""

    def __init__(self, ch: int, dtype=np.float32):
        self.gamma = Tensor(np.ones(ch, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(ch, dtype=dtype), requires_grad=True)
        self.running_mu = np.zeros(ch, dtype=dtype)
        self.running_var = np.ones(ch, dtype=dtype)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            normalized = _batch_normalize(x)
            mu, sigma = ad.batch_channel_stats(x)
            self.running_mu = ((1 - BN_MOMENTUM) * self.running_mu + BN_MOMENTUM * mu).astype(
                self.running_mu.dtype
            )
            self.running_var = (
                (1 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * sigma**2
            ).astype(self.running_var.dtype)
        else:
            mu = self.running_mu.reshape(1, -1, 1, 1)
            sigma = np.sqrt(self.running_var).reshape(1, -1, 1, 1)
            normalized = (x - Tensor(mu.astype(x.dtype))) * Tensor(
                (1.0 / (sigma + BN_EPS)).astype(x.dtype)
            )
        g = self.gamma.reshape(1, -1, 1, 1)
        b = self.beta.reshape(1, -1, 1, 1)
        return normalized * g + b

    def params(self) -> dict:
        return {"gamma": self.gamma, "beta": self.beta}

    def stats(self) -> dict:
        return {"running_mu": self.running_mu, "running_var": self.running_var}


class EmbeddingNet:
    """Six fully-connected layers mapping task codes to embeddings.

    Widths: 20*K -> hidden x4 -> n_w, leaky ReLU between layers.
    """

    N_LAYERS = 6

    def __init__(self, rng, code_dim: int, n_w: int = 128, hidden: int = 128, dtype=np.float32):
        widths = [code_dim] + [hidden] * (self.N_LAYERS - 1) + [n_w]
        self.layers = [
            Linear(rng, widths[i], widths[i + 1], dtype) for i in range(self.N_LAYERS)
        ]
        self.n_w = n_w

    def __call__(self, codes: Tensor) -> Tensor:
        h = codes
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = ad.leaky_relu(h, LEAKY_SLOPE)
        return h

    def params(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for n, p in layer.params().items():
                out[f"layer{i}.{n}"] = p
        return out


def embed_tasks(net: EmbeddingNet, codes: np.ndarray, dtype=np.float32) -> Tensor:
    """Embeddings for all tasks: (K, n_w)."""
    return net(Tensor(codes.astype(dtype)))


def broadcast_embedding(palette: np.ndarray, embeddings: Tensor) -> Tensor:
    """E[:, y, x] = e_{t_yx}; palette (H, W) or (N, H, W)."""
    if palette.max(initial=0) >= embeddings.shape[0]:
        raise ValueError(
            f"palette id {int(palette.max())} has no embedding (table has {embeddings.shape[0]})"
        )
    return ad.embedding_lookup(embeddings, palette.astype(np.int64))


def build_pyramid(e: Tensor, levels: int = 5) -> list:
    """Level i is E bilinearly resized to (H / 2^i, W / 2^i); level 0 is E."""
    if levels > 6:
        raise ValueError("at most 6 pyramid levels are supported")
    n, c, h, w = e.shape
    out = [e]
    for i in range(1, levels + 1):
        out.append(ad.resize_bilinear(e, h >> i, w >> i))
    return out


class CompositionBlock:
    """Task-conditioned feature transform (conv + conditional normalization)."""

    def __init__(
        self,
        rng,
        in_ch: int,
        out_ch: int,
        n_w: int,
        k: int = 3,
        activate: bool = True,
        dtype=np.float32,
    ):
        self.feat = Conv2d(rng, in_ch, out_ch, k, dtype=dtype)
        self.shared = Conv2d(rng, n_w, n_w, 1, dtype=dtype)
        self.gamma = Conv2d(rng, n_w, out_ch, 1, dtype=dtype)
        self.gamma.w.data[:] = 0.0
        self.gamma.b.data[:] = 1.0
        self.beta = Conv2d(rng, n_w, out_ch, 1, dtype=dtype)
        self.beta.w.data[:] = 0.0
        self.activate = activate
        self.out_ch = out_ch
        self.running_mu = np.zeros(out_ch, dtype=dtype)
        self.running_var = np.ones(out_ch, dtype=dtype)

    def __call__(self, h: Tensor, e_level: Tensor, training: bool) -> Tensor:
        hc = self.feat(h)
        if hc.shape[2:] != e_level.shape[2:]:
            raise ValueError(
                f"feature size {hc.shape[2:]} != embedding size {e_level.shape[2:]}"
            )
        if training:
            normalized = _batch_normalize(hc)
            mu, sigma = ad.batch_channel_stats(hc)
            self.running_mu = ((1 - BN_MOMENTUM) * self.running_mu + BN_MOMENTUM * mu).astype(
                self.running_mu.dtype
            )
            self.running_var = (
                (1 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * sigma**2
            ).astype(self.running_var.dtype)
        else:
            mu = self.running_mu.reshape(1, -1, 1, 1)
            sigma = np.sqrt(self.running_var).reshape(1, -1, 1, 1)
            normalized = (hc - Tensor(mu.astype(hc.dtype))) * Tensor(
                (1.0 / (sigma + BN_EPS)).astype(hc.dtype)
            )
        s = ad.leaky_relu(self.shared(e_level), LEAKY_SLOPE)
        gamma = self.gamma(s)
        beta = self.beta(s)
        out = gamma * normalized + beta
        if self.activate:
            out = ad.leaky_relu(out, LEAKY_SLOPE)
        return out

    def affine_maps(self, e_level: Tensor) -> tuple:
        """(gamma, beta) maps for a given embedding level, without features."""
        s = ad.leaky_relu(self.shared(e_level), LEAKY_SLOPE)
        return self.gamma(s), self.beta(s)

    def params(self) -> dict:
        out = {}
        for sub in ("feat", "shared", "gamma", "beta"):
            for n, p in getattr(self, sub).params().items():
                out[f"{sub}.{n}"] = p
        return out

    def stats(self) -> dict:
        return {"running_mu": self.running_mu, "running_var": self.running_var}
