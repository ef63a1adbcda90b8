# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled loops for convolution and block max-pooling.

Signatures mirror ``poolskip._kernels_py``; arrays are C-contiguous float64
in (N, C, H, W) layout, pool indices are int64.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

from scipy.linalg.cython_blas cimport dgemm


cdef void _im2col(const double[:, :, :, ::1] x, Py_ssize_t n, Py_ssize_t m, Py_ssize_t stride,
                  Py_ssize_t ho, Py_ssize_t wo, double[:, ::1] cols) noexcept nogil:
    cdef Py_ssize_t c, p, q, i, j, r
    for c in range(x.shape[1]):
        for p in range(m):
            for q in range(m):
                r = (c * m + p) * m + q
                for i in range(ho):
                    for j in range(wo):
                        cols[r, i * wo + j] = x[n, c, i * stride + p, j * stride + q]


cdef void _col2im(const double[:, ::1] cols, Py_ssize_t n, Py_ssize_t m, Py_ssize_t stride,
                  Py_ssize_t ho, Py_ssize_t wo, double[:, :, :, ::1] gx) noexcept nogil:
    cdef Py_ssize_t c, p, q, i, j, r
    for c in range(gx.shape[1]):
        for p in range(m):
            for q in range(m):
                r = (c * m + p) * m + q
                for i in range(ho):
                    for j in range(wo):
                        gx[n, c, i * stride + p, j * stride + q] += cols[r, i * wo + j]


def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w, Py_ssize_t stride):
    cdef Py_ssize_t nb = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], m = w.shape[2]
    cdef Py_ssize_t ho = (h - m) // stride + 1, wo = (wd - m) // stride + 1
    cdef int kk = <int>(ci * m * m), pp = <int>(ho * wo), oo = <int>co
    cdef double one = 1.0, zero = 0.0
    cdef char nt = b'N'
    out_arr = np.empty((nb, co, ho, wo), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef double[:, ::1] cols = np.empty((kk, pp), dtype=np.float64)
    cdef Py_ssize_t n
    # row-major out[n] (co x P) = w (co x K) @ cols (K x P), issued as column-major
    for n in range(nb):
        _im2col(x, n, m, stride, ho, wo, cols)
        dgemm(&nt, &nt, &pp, &oo, &kk, &one, &cols[0, 0], &pp,
              <double*>&w[0, 0, 0, 0], &kk, &zero, &out[n, 0, 0, 0], &pp)
    return out_arr


def conv2d_backward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w,
                    const double[:, :, :, ::1] gy, Py_ssize_t stride):
    cdef Py_ssize_t nb = x.shape[0], ci = x.shape[1]
    cdef Py_ssize_t co = w.shape[0], m = w.shape[2]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    cdef int kk = <int>(ci * m * m), pp = <int>(ho * wo), oo = <int>co
    cdef double one = 1.0, zero = 0.0
    cdef char nt = b'N', tr = b'T'
    gx_arr = np.zeros((x.shape[0], x.shape[1], x.shape[2], x.shape[3]), dtype=np.float64)
    gw_arr = np.zeros((w.shape[0], w.shape[1], w.shape[2], w.shape[3]), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[:, ::1] cols = np.empty((kk, pp), dtype=np.float64)
    cdef double[:, ::1] gcols = np.empty((kk, pp), dtype=np.float64)
    cdef Py_ssize_t n
    for n in range(nb):
        _im2col(x, n, m, stride, ho, wo, cols)
        # gw (co x K) += gy[n] (co x P) @ cols.T
        dgemm(&tr, &nt, &kk, &oo, &pp, &one, &cols[0, 0], &pp,
              <double*>&gy[n, 0, 0, 0], &pp, &one, &gw[0, 0, 0, 0], &kk)
        # gcols (K x P) = w.T @ gy[n]
        dgemm(&nt, &tr, &pp, &kk, &oo, &one, <double*>&gy[n, 0, 0, 0], &pp,
              <double*>&w[0, 0, 0, 0], &kk, &zero, &gcols[0, 0], &pp)
        _col2im(gcols, n, m, stride, ho, wo, gx)
    return gx_arr, gw_arr


def maxpool_forward(const double[:, :, :, ::1] y, Py_ssize_t e):
    cdef Py_ssize_t nb = y.shape[0], ch = y.shape[1]
    cdef Py_ssize_t hc = y.shape[2] // e, wc = y.shape[3] // e
    a_arr = np.empty((nb, ch, hc, wc), dtype=np.float64)
    r_arr = np.empty((nb, ch, hc, wc), dtype=np.int64)
    c_arr = np.empty((nb, ch, hc, wc), dtype=np.int64)
    cdef double[:, :, :, ::1] a = a_arr
    cdef cnp.int64_t[:, :, :, ::1] rows = r_arr
    cdef cnp.int64_t[:, :, :, ::1] cols = c_arr
    cdef Py_ssize_t n, k, u, v, p, q, bp, bq
    cdef double best, val
    for n in range(nb):
        for k in range(ch):
            for u in range(hc):
                for v in range(wc):
                    best = y[n, k, u * e, v * e]
                    bp = 0
                    bq = 0
                    # strict > keeps the first maximum in row-major scan
                    for p in range(e):
                        for q in range(e):
                            val = y[n, k, u * e + p, v * e + q]
                            if val > best:
                                best = val
                                bp = p
                                bq = q
                    a[n, k, u, v] = best
                    rows[n, k, u, v] = bp
                    cols[n, k, u, v] = bq
    return a_arr, r_arr, c_arr


def maxunpool_forward(const double[:, :, :, ::1] a, const cnp.int64_t[:, :, :, ::1] rows,
                      const cnp.int64_t[:, :, :, ::1] cols, Py_ssize_t e):
    cdef Py_ssize_t nb = a.shape[0], ch = a.shape[1], hc = a.shape[2], wc = a.shape[3]
    out_arr = np.zeros((nb, ch, hc * e, wc * e), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, k, u, v
    for n in range(nb):
        for k in range(ch):
            for u in range(hc):
                for v in range(wc):
                    out[n, k, u * e + rows[n, k, u, v], v * e + cols[n, k, u, v]] = a[n, k, u, v]
    return out_arr


maxpool_backward = maxunpool_forward
