"""Pool Skip composite operator and its closed-form evaluation.

The operator inserted between a convolution and its ReLU::

    o = y + conv3x3(pad_one_ring(maxunpool(maxpool(y, e))))

Per channel pooling; the inner 3x3 kernel mixes all C channels (C -> C).
Three ablation variants drop one component each.

The closed form re-derives the single-channel output directly from the
pre-image ``x`` and the first kernel ``w``: every compensation term is a
product ``w_tilde[s, t] * w[m, n] * x[r + m, c + n]`` where ``(r, c)`` is a
block argmax reachable from the output position through the padded 3x3
window. Terms landing inside the output's own receptive field change existing
coefficients (affine compensation); the rest bring in new inputs
(dimensional compensation).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import IndivisiblePoolSize, InconsistentIndices, NonOddKernel, ShapeMismatch
from .ops import ConvKernel, PoolIndices, as_kernel


class Variant(str, enum.Enum):
    FULL = "full"
    POOL_SKIP_ONLY = "pool_skip"
    CONV_SKIP_ONLY = "conv_skip"
    POOL_CONV_ONLY = "pool_conv"

    @property
    def uses_pool(self) -> bool:
        return self is not Variant.CONV_SKIP_ONLY

    @property
    def uses_conv(self) -> bool:
        return self is not Variant.POOL_SKIP_ONLY

    @property
    def uses_skip(self) -> bool:
        return self is not Variant.POOL_CONV_ONLY


def validate_pool_size(h: int, w: int, m: int, e: int) -> list[str]:
    """Return the violated divisibility conditions for pool extent ``e``.

    ``h, w`` are the extents of the conv input and ``m`` its kernel size; the
    pooled map has extents ``h - m + 1`` and ``w - m + 1``. An empty list means
    the configuration is valid.
    """
    violations = []
    if h % e:
        violations.append("e does not divide H")
    if (h - m + 1) % e:
        violations.append("e does not divide H-M+1")
    if w % e:
        violations.append("e does not divide W")
    if (w - m + 1) % e:
        violations.append("e does not divide W-M+1")
    return violations


@dataclass(frozen=True, eq=False)
class PoolSkipConfig:
    e: int
    inner_kernel: ConvKernel
    variant: Variant = Variant.FULL

    def __post_init__(self):
        k = as_kernel(self.inner_kernel)
        if k.m != 3:
            raise ShapeMismatch(f"inner kernel must be 3x3, got {k.m}x{k.m}")
        if k.c_in != k.c_out:
            raise ShapeMismatch("inner kernel must map C channels to C channels")
        if self.e < 1:
            raise ValueError("pool extent must be >= 1")
        object.__setattr__(self, "inner_kernel", k)
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def channels(self) -> int:
        return self.inner_kernel.c_in


def init_inner_kernel(channels: int, rng: np.random.Generator, gain: float = 1.0) -> ConvKernel:
    """Zero-centred uniform init with bound ``gain / sqrt(fan_in)``."""
    bound = gain / np.sqrt(channels * 9)
    return ConvKernel(rng.uniform(-bound, bound, size=(channels, channels, 3, 3)))


def _check_input(y, cfg: PoolSkipConfig):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        channels = 1
    elif y.ndim in (3, 4):
        channels = y.shape[-3]
    else:
        raise ShapeMismatch(f"expected rank 2-4 feature map, got {y.shape}")
    if channels != cfg.channels:
        raise ShapeMismatch(f"feature map has {channels} channels, inner kernel {cfg.channels}")
    if cfg.variant.uses_pool:
        bad = [f"e does not divide {n}" for n, v in zip("HW", y.shape[-2:]) if v % cfg.e]
        if bad:
            raise IndivisiblePoolSize(bad)
    return y


def poolskip_forward(y, cfg: PoolSkipConfig):
    """Apply the configured variant; returns ``(o, idx)``.

    ``idx`` is ``None`` for the variant without pooling.
    """
    y = _check_input(y, cfg)
    idx = None
    branch = y
    if cfg.variant.uses_pool:
        a, idx = ops.maxpool_forward(y, cfg.e)
        branch = ops.maxunpool_forward(a, idx)
    if cfg.variant.uses_conv:
        branch = ops.conv2d_forward(ops.pad_one_ring(branch), cfg.inner_kernel)
    o = y + branch if cfg.variant.uses_skip else branch
    return o, idx


def poolskip_backward(y, cfg: PoolSkipConfig, idx: PoolIndices | None, grad_o):
    """Return ``(grad_y, grad_inner_kernel)``; the kernel gradient is zero when unused."""
    y = _check_input(y, cfg)
    g = np.asarray(grad_o, dtype=np.float64)
    if g.shape != y.shape:
        raise ShapeMismatch(f"grad_o shape {g.shape} != input shape {y.shape}")
    if cfg.variant.uses_pool:
        if idx is None:
            raise InconsistentIndices("pooling variant needs the forward indices")
        if idx.e != cfg.e or idx.rows.shape != (*y.shape[:-2], y.shape[-2] // cfg.e, y.shape[-1] // cfg.e):
            raise InconsistentIndices("indices do not match this input and pool size")
        branch_in = ops.maxunpool_forward(ops.maxunpool_backward(idx, y), idx)
    else:
        branch_in = y

    grad_k = np.zeros_like(cfg.inner_kernel.weights)
    g_branch = g
    if cfg.variant.uses_conv:
        g_pad, grad_k = ops.conv2d_backward(ops.pad_one_ring(branch_in), cfg.inner_kernel, g)
        g_branch = ops.unpad_one_ring(g_pad)
    if cfg.variant.uses_pool:
        g_branch = ops.maxpool_backward(idx, ops.maxunpool_backward(idx, g_branch))
    grad_y = g + g_branch if cfg.variant.uses_skip else g_branch
    return grad_y, grad_k


# closed form (single channel)

def _single(k, name) -> np.ndarray:
    w = np.asarray(k.weights if isinstance(k, ConvKernel) else k, dtype=np.float64)
    w = w.reshape(w.shape[-2:]) if w.ndim == 4 and w.shape[:2] == (1, 1) else w
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ShapeMismatch(f"{name} must be a single-channel square kernel, got {w.shape}")
    if w.shape[0] % 2 == 0:
        raise NonOddKernel(f"{name} extent {w.shape[0]} is even")
    return w


def _argmax_table(y: np.ndarray, e: int) -> np.ndarray:
    """Boolean map of block maxima found by a first-occurrence scan."""
    hit = np.zeros(y.shape, dtype=bool)
    for u in range(y.shape[0] // e):
        for v in range(y.shape[1] // e):
            best, at = None, None
            for p in range(e):
                for q in range(e):
                    val = y[u * e + p, v * e + q]
                    if best is None or val > best:
                        best, at = val, (u * e + p, v * e + q)
            hit[at] = True
    return hit


def _terms(x, w, w_tilde, e):
    """Yield ``(i, j, s, t, r, c, y, hit)`` for every compensation source.

    ``(r, c)`` is the block argmax feeding output ``(i, j)`` through inner tap
    ``(s, t)``; ``y`` is the first-stage convolution and ``hit`` the argmax map.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"closed form is single-channel; got input {x.shape}")
    w = _single(w, "w")
    wt = _single(w_tilde, "w_tilde")
    if wt.shape != (3, 3):
        raise ShapeMismatch("w_tilde must be 3x3")
    h, wd = x.shape
    m = w.shape[0]
    if m > h or m > wd:
        raise ShapeMismatch(f"kernel {m} exceeds input {x.shape}")
    bad = validate_pool_size(h, wd, m, e)
    if bad:
        raise IndivisiblePoolSize(bad)
    ho, wo = h - m + 1, wd - m + 1
    y = np.empty((ho, wo))
    for i in range(ho):
        for j in range(wo):
            y[i, j] = np.sum(w * x[i:i + m, j:j + m])
    hit = _argmax_table(y, e)
    terms = []
    for i in range(ho):
        for j in range(wo):
            for s in range(3):
                for t in range(3):
                    # one-ring pad shifts the unpooled map by one
                    r, c = i + s - 1, j + t - 1
                    if 0 <= r < ho and 0 <= c < wo and hit[r, c]:
                        terms.append((i, j, s, t, r, c))
    return x, w, wt, y, hit, terms


def poolskip_closed_form(x, w, w_tilde, e: int) -> np.ndarray:
    """Evaluate the Full Pool Skip output directly from ``x``, ``w`` and ``w_tilde``."""
    x, w, wt, y, _, terms = _terms(x, w, w_tilde, e)
    m = w.shape[0]
    out = y.copy()
    for i, j, s, t, r, c in terms:
        out[i, j] += wt[s, t] * np.sum(w * x[r:r + m, c:c + m])
    return out


@dataclass(frozen=True, eq=False)
class CompensationReport:
    base: np.ndarray
    affine: np.ndarray
    dimensional: np.ndarray
    covered_mask: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.base + self.affine + self.dimensional


def compensation_decompose(x, w, w_tilde, e: int) -> CompensationReport:
    """Split the closed-form output into base, affine and dimensional parts.

    A term ``w_tilde[s, t] * w[m, n] * x[r + m, c + n]`` is affine when that
    input lies inside the receptive field ``[i, i+M) x [j, j+M)`` of output
    ``(i, j)`` and dimensional otherwise. ``covered_mask`` marks outputs that
    are themselves block maxima, one per ``e x e`` block.
    """
    x, w, wt, y, hit, terms = _terms(x, w, w_tilde, e)
    m = w.shape[0]
    affine = np.zeros_like(y)
    dimensional = np.zeros_like(y)
    offs = np.arange(m)
    for i, j, s, t, r, c in terms:
        contrib = wt[s, t] * w * x[r:r + m, c:c + m]
        # input row r + mm sits in the window iff 0 <= mm + s - 1 < M
        rows_in = (offs + s - 1 >= 0) & (offs + s - 1 < m)
        cols_in = (offs + t - 1 >= 0) & (offs + t - 1 < m)
        inside = rows_in[:, None] & cols_in[None, :]
        affine[i, j] += contrib[inside].sum()
        dimensional[i, j] += contrib[~inside].sum()
    return CompensationReport(y, affine, dimensional, hit.copy())
