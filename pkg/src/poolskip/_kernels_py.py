"""Pure numpy implementations of the hot kernels.

Every function takes C-contiguous float64 arrays in (N, C, H, W) layout and
mirrors the signatures of the compiled ``_kernels`` extension exactly.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x, m, stride):
    win = sliding_window_view(x, (m, m), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, stride):
    m = w.shape[2]
    win = _windows(x, m, stride)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(x, w, gy, stride):
    m = w.shape[2]
    ho, wo = gy.shape[2], gy.shape[3]
    win = _windows(x, m, stride)
    gw = np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))
    gx = np.zeros_like(x)
    # one strided scatter per kernel tap
    for i in range(m):
        for j in range(m):
            contrib = np.tensordot(w[:, :, i, j], gy, axes=([0], [1])).transpose(1, 0, 2, 3)
            gx[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += contrib
    return gx, np.ascontiguousarray(gw)


def maxpool_forward(y, e):
    n, c, h, w = y.shape
    blocks = y.reshape(n, c, h // e, e, w // e, e).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // e, w // e, e * e)
    # np.argmax returns the first maximal element in row-major block order
    flat = np.argmax(blocks, axis=-1)
    a = np.take_along_axis(blocks, flat[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(a), flat // e, flat % e


def maxunpool_forward(a, rows, cols, e):
    n, c, hc, wc = a.shape
    out = np.zeros((n, c, hc, e, wc, e), dtype=np.float64)
    ni, ci, ui, vi = np.indices(a.shape, sparse=True)
    out[ni, ci, ui, rows, vi, cols] = a
    return out.reshape(n, c, hc * e, wc * e)


maxpool_backward = maxunpool_forward
