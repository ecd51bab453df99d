"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor records the ops that produced it; calling backward() on a scalar
replays the tape in reverse topological order, accumulating gradients
exactly once per use of each input. Only the ops the task-composition
network actually needs are provided.

Forward computation runs in whatever dtype the inputs carry (float32 in
production); gradient checking promotes everything to float64.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # -- basic protocol -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- graph construction ---------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, release_graph: bool = True):
        """Accumulate gradients into every leaf; by default the graph is
        torn down afterwards so the closure cycles it holds are freed by
        reference counting rather than waiting on the garbage collector."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self.grad = np.ones_like(self.data)
        for t in reversed(topo):
            if t._backward is not None:
                t._backward()
        if release_graph:
            for t in topo:
                t._backward = None
                t._parents = ()

    # -- operators --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), -self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling graph construction (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _needs_grad(*tensors) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad or t._parents for t in tensors)


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _needs_grad(*parents):
        out._parents = tuple(parents)
        out._backward = backward
        out.requires_grad = True
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    out_data = a.data + b.data

    def backward():
        if out.grad is None:
            return
        a._accumulate(_unbroadcast(out.grad, a.shape))
        b._accumulate(_unbroadcast(out.grad, b.shape))

    out = _node(out_data, (a, b), backward)
    return out


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    out_data = a.data * b.data

    def backward():
        a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
        b._accumulate(_unbroadcast(out.grad * a.data, b.shape))

    out = _node(out_data, (a, b), backward)
    return out


def div(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    out_data = a.data / b.data

    def backward():
        a._accumulate(_unbroadcast(out.grad / b.data, a.shape))
        b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))

    out = _node(out_data, (a, b), backward)
    return out


def power(a: Tensor, p: float):
    out_data = a.data**p

    def backward():
        a._accumulate(out.grad * p * a.data ** (p - 1))

    out = _node(out_data, (a,), backward)
    return out


def exp(a: Tensor):
    out_data = np.exp(a.data)

    def backward():
        a._accumulate(out.grad * out_data)

    out = _node(out_data, (a,), backward)
    return out


def log(a: Tensor):
    out_data = np.log(a.data)

    def backward():
        a._accumulate(out.grad / a.data)

    out = _node(out_data, (a,), backward)
    return out


def sqrt(a: Tensor):
    out_data = np.sqrt(a.data)

    def backward():
        a._accumulate(out.grad * 0.5 / out_data)

    out = _node(out_data, (a,), backward)
    return out


def clip_min(a: Tensor, lo: float):
    """max(a, lo); gradient passes only where a > lo."""
    mask = a.data > lo
    out_data = np.where(mask, a.data, np.asarray(lo, dtype=a.dtype))

    def backward():
        a._accumulate(out.grad * mask)

    out = _node(out_data, (a,), backward)
    return out


def leaky_relu(a: Tensor, slope: float = 0.01):
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    # subgradient at exactly 0 takes the positive branch
    factor = np.where(a.data >= 0, 1.0, slope).astype(a.dtype)
    out_data = a.data * factor

    def backward():
        a._accumulate(out.grad * factor)

    out = _node(out_data, (a,), backward)
    return out


def sigmoid(a: Tensor):
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward():
        a._accumulate(out.grad * out_data * (1.0 - out_data))

    out = _node(out_data, (a,), backward)
    return out


# -- reductions / shape ----------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))

    out = _node(out_data, (a,), backward)
    return out


def tmean(a: Tensor, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for i in ax:
            n *= a.shape[i]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out_data = a.data.reshape(shape)

    def backward():
        a._accumulate(out.grad.reshape(a.shape))

    out = _node(out_data, (a,), backward)
    return out


def transpose(a: Tensor, axes=None):
    out_data = a.data.transpose(axes)
    inv = None if axes is None else np.argsort(axes)

    def backward():
        a._accumulate(out.grad.transpose(inv))

    out = _node(out_data, (a,), backward)
    return out


def concat(tensors, axis=0):
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * out_data.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(out.grad[tuple(idx)])

    out = _node(out_data, tuple(tensors), backward)
    return out


def matmul(a: Tensor, b: Tensor):
    out_data = a.data @ b.data

    def backward():
        a._accumulate(out.grad @ b.data.T)
        b._accumulate(a.data.T @ out.grad)

    out = _node(out_data, (a, b), backward)
    return out


# -- structured ops --------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, pad: int = 0):
    """Cross-correlation with zero padding over NCHW input.

    w has shape (OutC, InC, k, k); k in {1, 3}. The k=1 case bypasses
    im2col and runs as a plain channel matmul.
    """
    n, c, h, wd = x.shape
    oc, ic, k, k2 = w.shape
    if k != k2 or k not in (1, 3):
        raise ValueError(f"conv2d kernel must be square 1x1 or 3x3, got {k}x{k2}")
    if ic != c:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs weights {w.shape}")
    oh = kernels.conv_out_size(h, k, stride, pad)
    ow = kernels.conv_out_size(wd, k, stride, pad)

    wmat = w.data.reshape(oc, ic * k * k)
    if k == 1 and pad == 0 and stride == 1:
        cols = x.data.reshape(n, c, h * wd)
    else:
        cols = kernels.im2col(x.data, k, stride, pad)
    out_data = np.matmul(wmat, cols).reshape(n, oc, oh, ow)
    if b is not None:
        out_data = out_data + b.data.reshape(1, oc, 1, 1)

    def backward():
        gy = out.grad.reshape(n, oc, oh * ow)
        gw = np.einsum("noi,nci->oc", gy, cols, optimize=True).reshape(w.shape)
        w._accumulate(gw)
        if b is not None:
            b._accumulate(out.grad.sum(axis=(0, 2, 3)))
        gcols = np.matmul(wmat.T, gy)
        if k == 1 and pad == 0 and stride == 1:
            gx = gcols.reshape(n, c, h, wd)
        else:
            gx = kernels.col2im(gcols, (n, c, h, wd), k, stride, pad)
        x._accumulate(gx)

    parents = (x, w) if b is None else (x, w, b)
    out = _node(out_data, parents, backward)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor | None):
    """y = x @ w.T + b for x (B, D), w (M, D), b (M)."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear dim mismatch: input {x.shape} vs weights {w.shape}")
    y = matmul(x, transpose(w))
    if b is not None:
        y = add(y, b)
    return y


def _interp_matrix(out_size: int, in_size: int, dtype) -> np.ndarray:
    """Bilinear interpolation matrix with half-pixel centers (one axis)."""
    m = np.zeros((out_size, in_size), dtype=dtype)
    scale = in_size / out_size
    for o in range(out_size):
        src = (o + 0.5) * scale - 0.5
        src = min(max(src, 0.0), in_size - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, in_size - 1)
        t = src - i0
        m[o, i0] += 1.0 - t
        m[o, i1] += t
    return m


def resize_bilinear(x: Tensor, out_h: int, out_w: int):
    """Bilinear resampling of NCHW with half-pixel centers; identity when sizes match."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize target must be positive, got {out_h}x{out_w}")
    n, c, h, w = x.shape
    if out_h == h and out_w == w:
        return _identity(x)
    rm = _interp_matrix(out_h, h, x.dtype)
    cm = _interp_matrix(out_w, w, x.dtype)
    out_data = np.einsum("oh,nchw,pw->ncop", rm, x.data, cm, optimize=True)

    def backward():
        gx = np.einsum("oh,ncop,pw->nchw", rm, out.grad, cm, optimize=True)
        x._accumulate(gx.astype(x.dtype, copy=False))

    out = _node(out_data, (x,), backward)
    return out


def _identity(x: Tensor):
    def backward():
        x._accumulate(out.grad)

    out = _node(x.data, (x,), backward)
    return out


def embedding_lookup(table: Tensor, ids: np.ndarray):
    """Broadcast per-row embeddings over an integer id grid.

    table: (K, D); ids: integer array (..., H, W). Output has shape
    ids.shape + (D,) moved so that for (N, H, W) ids the result is
    (N, D, H, W).
    """
    ids = np.asarray(ids)
    gathered = table.data[ids]  # ids.shape + (D,)
    if ids.ndim == 2:
        out_data = np.moveaxis(gathered, -1, 0)  # (D, H, W)
    elif ids.ndim == 3:
        out_data = np.moveaxis(gathered, -1, 1)  # (N, D, H, W)
    else:
        raise ValueError(f"ids must be 2- or 3-dimensional, got shape {ids.shape}")

    def backward():
        g = out.grad
        g = np.moveaxis(g, 0 if ids.ndim == 2 else 1, -1)
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(gt)

    out = _node(out_data, (table,), backward)
    return out


def gather_pixels(x: Tensor, n_idx: np.ndarray, y_idx: np.ndarray, x_idx: np.ndarray):
    """Select pixel vectors from an NCHW tensor: output (P, C)."""
    out_data = x.data[n_idx, :, y_idx, x_idx]

    def backward():
        gx = np.zeros_like(x.data)
        np.add.at(gx, (n_idx, slice(None), y_idx, x_idx), out.grad)
        x._accumulate(gx)

    out = _node(out_data, (x,), backward)
    return out


def softmax(x: Tensor, axis: int = -1):
    """Shift-invariant softmax along one axis."""
    shifted = add(x, Tensor(-x.data.max(axis=axis, keepdims=True)))
    e = exp(shifted)
    return div(e, tsum(e, axis=axis, keepdims=True))


def batch_channel_stats(x: Tensor) -> tuple[np.ndarray, np.ndarray]:
    """Population mean and standard deviation per channel over (N, H, W)."""
    mu = x.data.mean(axis=(0, 2, 3))
    var = (x.data**2).mean(axis=(0, 2, 3)) - mu**2
    return mu, np.sqrt(np.maximum(var, 0.0))


# -- gradient checking ------------------------------------------------------


def zero_grads(params):
    for p in params:
        p.zero_grad()


def grad_check(
    f,
    params,
    h: float = 1e-5,
    samples_per_param: int | None = None,
    rng=None,
    floor: float = 1e-8,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    f is a deterministic closure over `params` returning a scalar Tensor;
    params must be float64 leaves. When samples_per_param is given, only a
    random subset of entries per parameter is probed. `floor` bounds the
    denominator from below: entries whose true gradient sits near the
    central-difference noise floor (~eps * |loss| / h) are effectively
    compared in absolute terms, e.g. parameters a normalization layer makes
    the loss invariant to.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for p in params:
        if p.dtype != np.float64:
            raise ValueError("grad_check requires float64 parameters")
    zero_grads(params)
    out = f()
    if not np.isfinite(out.data).all():
        raise ValueError("grad_check: non-finite loss")
    out.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if samples_per_param is None or samples_per_param >= n:
            idxs = range(n)
        else:
            idxs = rng.choice(n, size=samples_per_param, replace=False)
        for i in idxs:
            orig = flat[i]
            with no_grad():  # numeric probes need values only
                flat[i] = orig + h
                lp = f().item()
                flat[i] = orig - h
                lm = f().item()
            flat[i] = orig
            numeric = (lp - lm) / (2 * h)
            a = ana.reshape(-1)[i]
            rel = abs(a - numeric) / max(floor, abs(a) + abs(numeric))
            worst = max(worst, rel)
    return worst
