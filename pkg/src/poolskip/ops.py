"""Forward and backward kernels for the primitive layers.

All spatial ops act on the trailing two axes. Convolutions accept inputs of
rank 2 ``(H, W)``, 3 ``(C, H, W)`` or 4 ``(N, C, H, W)``; pooling accepts any
rank >= 2. Arrays are float64 throughout, indices are 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import kernels as _k
from .errors import (
    DegenerateBatch,
    InconsistentIndices,
    IndivisiblePoolSize,
    KernelTooLarge,
    LabelOutOfRange,
    NonOddKernel,
    ShapeMismatch,
)
from .tensor import Shape2D


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class ConvKernel:
    """Convolution weights of shape ``(c_out, c_in, M, M)`` with odd ``M``."""

    weights: np.ndarray

    def __post_init__(self):
        w = _f64(self.weights)
        if w.ndim == 2:
            w = w.reshape(1, 1, *w.shape)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeMismatch(f"kernel must be (c_out, c_in, M, M), got {w.shape}")
        if w.shape[2] % 2 == 0:
            raise NonOddKernel(f"kernel extent {w.shape[2]} is even")
        if min(w.shape) < 1:
            raise ShapeMismatch(f"empty kernel {w.shape}")
        object.__setattr__(self, "weights", w)

    @property
    def m(self) -> int:
        return self.weights.shape[2]

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]


def as_kernel(k) -> ConvKernel:
    return k if isinstance(k, ConvKernel) else ConvKernel(k)


def _to4d(x):
    x = _f64(x)
    if x.ndim == 2:
        return x.reshape(1, 1, *x.shape), x.ndim
    if x.ndim == 3:
        return x.reshape(1, *x.shape), x.ndim
    if x.ndim == 4:
        return x, x.ndim
    raise ShapeMismatch(f"expected rank 2-4 input, got shape {x.shape}")


def _from4d(y, ndim):
    if ndim == 2:
        return y[0, 0]
    if ndim == 3:
        return y[0]
    return y


def conv2d_forward(x, k, stride: int = 1) -> np.ndarray:
    """Valid, unflipped cross-correlation summed over input channels."""
    k = as_kernel(k)
    x4, nd = _to4d(x)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if x4.shape[1] != k.c_in:
        raise ShapeMismatch(f"input has {x4.shape[1]} channels, kernel expects {k.c_in}")
    if nd == 2 and k.c_out != 1:
        raise ShapeMismatch("rank-2 input needs a single-output-channel kernel")
    if k.m > x4.shape[2] or k.m > x4.shape[3]:
        raise KernelTooLarge(f"kernel {k.m} exceeds input extent {x4.shape[2:]}")
    return _from4d(_k.conv2d_forward(x4, k.weights, int(stride)), nd)


def conv2d_backward(x, k, grad_out, stride: int = 1):
    """Return ``(grad_x, grad_k)`` for :func:`conv2d_forward`."""
    k = as_kernel(k)
    x4, nd = _to4d(x)
    g4, _ = _to4d(grad_out)
    ho = (x4.shape[2] - k.m) // stride + 1
    wo = (x4.shape[3] - k.m) // stride + 1
    expected = (x4.shape[0], k.c_out, ho, wo)
    if g4.shape != expected:
        raise ShapeMismatch(f"grad_out shape {g4.shape} != forward output {expected}")
    gx, gk = _k.conv2d_backward(x4, k.weights, g4, int(stride))
    return _from4d(gx, nd), gk.reshape(np.shape(k.weights))


@dataclass(frozen=True, eq=False)
class PoolIndices:
    """Per-block argmax offsets recorded by :func:`maxpool_forward`.

    ``rows`` and ``cols`` hold local offsets in ``[0, e)`` and share the
    pooled array's shape; the last two axes are the block grid ``(c, d)``.
    """

    e: int
    rows: np.ndarray
    cols: np.ndarray
    lead_shape: tuple = field(default=())

    @property
    def block_grid(self) -> tuple[int, int]:
        return self.rows.shape[-2], self.rows.shape[-1]

    @property
    def coords(self) -> np.ndarray:
        return np.stack([self.rows, self.cols], axis=-1)

    def validate(self):
        if self.rows.shape != self.cols.shape:
            raise InconsistentIndices("row and column index arrays differ in shape")
        for arr in (self.rows, self.cols):
            if arr.size and (arr.min() < 0 or arr.max() >= self.e):
                raise InconsistentIndices(f"pool index outside [0, {self.e})")


def _as_pool4d(y):
    y = _f64(y)
    if y.ndim < 2:
        raise ShapeMismatch(f"pooling needs rank >= 2, got {y.shape}")
    lead = y.shape[:-2]
    return y.reshape(-1, 1, *y.shape[-2:]), lead


def _idx4d(idx: PoolIndices):
    r = np.ascontiguousarray(idx.rows, dtype=np.int64)
    c = np.ascontiguousarray(idx.cols, dtype=np.int64)
    return r.reshape(-1, 1, *r.shape[-2:]), c.reshape(-1, 1, *c.shape[-2:])


def maxpool_forward(y, e: int):
    """Non-overlapping ``e x e`` max-pooling; ties go to the first row-major hit."""
    y4, lead = _as_pool4d(y)
    h, w = y4.shape[2:]
    bad = [name for name, n in (("H", h), ("W", w)) if n % e]
    if e < 1 or bad:
        raise IndivisiblePoolSize([f"e does not divide {name}" for name in bad] or ["e < 1"])
    a, rows, cols = _k.maxpool_forward(y4, int(e))
    grid = (h // e, w // e)
    idx = PoolIndices(int(e), rows.reshape(*lead, *grid), cols.reshape(*lead, *grid), lead)
    return a.reshape(*lead, *grid), idx


def _check_grid(idx: PoolIndices, arr) -> None:
    if np.shape(arr) != idx.rows.shape:
        raise ShapeMismatch(f"array shape {np.shape(arr)} != pooled shape {idx.rows.shape}")
    idx.validate()


def maxpool_backward(idx: PoolIndices, grad_a) -> np.ndarray:
    """Route each pooled gradient to its recorded argmax; zeros elsewhere."""
    _check_grid(idx, grad_a)
    g4, lead = _as_pool4d(grad_a)
    r, c = _idx4d(idx)
    out = _k.maxpool_backward(g4, r, c, idx.e)
    return out.reshape(*lead, *out.shape[2:])


def maxunpool_forward(a, idx: PoolIndices, e: int | None = None, out_shape: Shape2D | None = None):
    """Place each pooled value back at its argmax position, zero elsewhere."""
    e = idx.e if e is None else int(e)
    if e != idx.e:
        raise InconsistentIndices(f"indices were recorded with e={idx.e}, not {e}")
    _check_grid(idx, a)
    c, d = idx.block_grid
    if out_shape is not None and (out_shape.h, out_shape.w) != (c * e, d * e):
        raise ShapeMismatch(f"out_shape {out_shape} != ({c * e}, {d * e})")
    a4, lead = _as_pool4d(a)
    r, cc = _idx4d(idx)
    out = _k.maxunpool_forward(a4, r, cc, e)
    return out.reshape(*lead, *out.shape[2:])


def maxunpool_backward(idx: PoolIndices, grad_out) -> np.ndarray:
    """Gather the gradient at every argmax position back onto the block grid."""
    g = _f64(grad_out)
    c, d = idx.block_grid
    e = idx.e
    if g.shape != (*idx.rows.shape[:-2], c * e, d * e):
        raise ShapeMismatch(f"grad shape {g.shape} does not match indices")
    idx.validate()
    blocks = g.reshape(*g.shape[:-2], c, e, d, e)
    lead = np.indices(idx.rows.shape, sparse=True)
    return blocks[(*lead[:-2], lead[-2], idx.rows, lead[-1], idx.cols)]


def pad_one_ring(y) -> np.ndarray:
    y = _f64(y)
    widths = [(0, 0)] * (y.ndim - 2) + [(1, 1), (1, 1)]
    return np.pad(y, widths)


def unpad_one_ring(g) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(g)[..., 1:-1, 1:-1])


def relu_forward(x) -> np.ndarray:
    x = _f64(x)
    return np.where(x > 0, x, 0.0)


def relu_backward(x, grad_out) -> np.ndarray:
    """Pass ``grad_out`` where ``x > 0``; exactly zero where ``x <= 0``."""
    x, g = _f64(x), _f64(grad_out)
    if x.shape != g.shape:
        raise ShapeMismatch(f"{x.shape} != {g.shape}")
    return np.where(x > 0, g, 0.0)


@dataclass
class BatchNormState:
    """Running statistics used in inference mode."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.9

    @classmethod
    def fresh(cls, channels: int, momentum: float = 0.9) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels), momentum)


def batchnorm_forward(x, gamma, beta, eps: float = 1e-5, *, training: bool = True,
                      state: BatchNormState | None = None):
    """Per-channel normalisation over batch and spatial axes of ``(N, C, H, W)``."""
    x = _f64(x)
    gamma, beta = _f64(gamma), _f64(beta)
    if x.ndim != 4:
        raise ShapeMismatch(f"batchnorm expects (N, C, H, W), got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"gamma/beta must have shape ({c},)")
    axes = (0, 2, 3)
    if training:
        if x.shape[0] < 2:
            raise DegenerateBatch("training-mode batchnorm needs batch size >= 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if state is not None:
            mom = state.momentum
            state.mean = mom * state.mean + (1 - mom) * mean
            state.var = mom * state.var + (1 - mom) * var
    else:
        if state is None:
            raise ValueError("inference-mode batchnorm needs running statistics")
        mean, var = state.mean, state.var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = {"xhat": xhat, "inv_std": inv_std, "gamma": gamma, "training": training}
    return y, cache


def batchnorm_backward(cache, grad_out):
    """Return ``(grad_x, grad_gamma, grad_beta)``."""
    g = _f64(grad_out)
    xhat, inv_std, gamma = cache["xhat"], cache["inv_std"], cache["gamma"]
    axes = (0, 2, 3)
    grad_beta = g.sum(axis=axes)
    grad_gamma = (g * xhat).sum(axis=axes)
    gxhat = g * gamma[None, :, None, None]
    if not cache["training"]:
        return gxhat * inv_std[None, :, None, None], grad_gamma, grad_beta
    count = g.shape[0] * g.shape[2] * g.shape[3]
    grad_x = (inv_std[None, :, None, None] / count) * (
        count * gxhat
        - gxhat.sum(axis=axes)[None, :, None, None]
        - xhat * (gxhat * xhat).sum(axis=axes)[None, :, None, None]
    )
    return grad_x, grad_gamma, grad_beta


def linear_forward(x, w, b) -> np.ndarray:
    x, w, b = _f64(x), _f64(w), _f64(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"linear shapes do not conform: x{x.shape} w{w.shape} b{b.shape}")
    return x @ w + b


def linear_backward(x, w, grad_out):
    x, w, g = _f64(x), _f64(w), _f64(grad_out)
    return g @ w.T, x.T @ g, g.sum(axis=0)


def global_avg_pool_forward(x) -> np.ndarray:
    return _f64(x).mean(axis=(-2, -1))


def global_avg_pool_backward(x_shape, grad_out) -> np.ndarray:
    h, w = x_shape[-2:]
    g = _f64(grad_out)[..., None, None] / (h * w)
    return np.broadcast_to(g, x_shape).copy()


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    z = _f64(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeMismatch(f"logits {z.shape} vs labels {labels.shape}")
    k = z.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    shifted = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = float(np.mean(logsumexp - shifted[rows, labels]))
    grad = np.exp(shifted - logsumexp[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / z.shape[0]
