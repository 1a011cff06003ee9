# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for convolution lowering, max pooling and mish.

Every function here has a pure-numpy twin in ``_kernels_py`` with the same
signature and the same results; ``gcprune.kernels`` picks one at import.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport exp, expf

cnp.import_array()


cdef inline void _col_range(Py_ssize_t kj, Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t w,
                            Py_ssize_t wo, Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # output columns oj with 0 <= oj*stride + kj - pad < w
    cdef Py_ssize_t a = pad - kj
    lo[0] = 0 if a <= 0 else (a + stride - 1) // stride
    cdef Py_ssize_t b = w - 1 + pad - kj
    hi[0] = -1 if b < 0 else b // stride
    hi[0] += 1
    if hi[0] > wo:
        hi[0] = wo
    if lo[0] > hi[0]:
        lo[0] = hi[0]


def im2col(floating[:, :, :, ::1] x, int k, int stride, int pad, int ho, int wo):
    """Lower an NCHW batch to a ``(C*k*k, N*ho*wo)`` column matrix (zero padded)."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((c * k * k, n * ho * wo), dtype=dtype)
    cdef floating[:, ::1] cols = out
    cdef Py_ssize_t b, ch, ki, kj, oi, oj, ii, row, base, lo, hi, off
    cdef Py_ssize_t plane = ho * wo
    with nogil:
        for ch in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ch * k + ki) * k + kj
                    _col_range(kj, stride, pad, w, wo, &lo, &hi)
                    off = kj - pad
                    for b in range(n):
                        for oi in range(ho):
                            ii = oi * stride + ki - pad
                            base = b * plane + oi * wo
                            if ii < 0 or ii >= h:
                                for oj in range(wo):
                                    cols[row, base + oj] = 0
                                continue
                            for oj in range(lo):
                                cols[row, base + oj] = 0
                            if stride == 1:
                                for oj in range(lo, hi):
                                    cols[row, base + oj] = x[b, ch, ii, oj + off]
                            else:
                                for oj in range(lo, hi):
                                    cols[row, base + oj] = x[b, ch, ii, oj * stride + off]
                            for oj in range(hi, wo):
                                cols[row, base + oj] = 0
    return out


def col2im(floating[:, ::1] cols, int n, int c, int h, int w, int k, int stride,
           int pad, int ho, int wo):
    """Adjoint of :func:`im2col`: scatter-add columns back into an NCHW array."""
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, ch, ki, kj, oi, oj, ii, row, base, lo, hi, off
    cdef Py_ssize_t plane = ho * wo
    with nogil:
        for ch in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ch * k + ki) * k + kj
                    _col_range(kj, stride, pad, w, wo, &lo, &hi)
                    off = kj - pad
                    for b in range(n):
                        for oi in range(ho):
                            ii = oi * stride + ki - pad
                            if ii < 0 or ii >= h:
                                continue
                            base = b * plane + oi * wo
                            for oj in range(lo, hi):
                                dx[b, ch, ii, oj * stride + off] += cols[row, base + oj]
    return out


def maxpool_forward(floating[:, :, :, ::1] x, int k, int stride, int pad, int ho, int wo):
    """Max pool with implicit -inf padding.

    Returns the pooled array and, per output cell, the flat ``h*w`` index of
    the first maximal input element in row-major scan order. Computed as a
    row pass followed by a column pass.
    """
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((n, c, ho, wo), dtype=dtype)
    arg = np.empty((n, c, ho, wo), dtype=np.int64)
    rowmax_arr = np.empty((h, wo), dtype=dtype)
    rowarg_arr = np.empty((h, wo), dtype=np.int64)
    cdef floating[:, :, :, ::1] y = out
    cdef cnp.int64_t[:, :, :, ::1] idx = arg
    cdef floating[:, ::1] rm = rowmax_arr
    cdef cnp.int64_t[:, ::1] ra = rowarg_arr
    cdef Py_ssize_t b, ch, oi, oj, ii, jj, j0, j1, i0, i1, best_i
    cdef floating best, v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ii in range(h):
                    for oj in range(wo):
                        j0 = oj * stride - pad
                        j1 = j0 + k
                        if j0 < 0:
                            j0 = 0
                        if j1 > w:
                            j1 = w
                        best = x[b, ch, ii, j0]
                        best_i = j0
                        for jj in range(j0 + 1, j1):
                            v = x[b, ch, ii, jj]
                            if v > best:
                                best = v
                                best_i = jj
                        rm[ii, oj] = best
                        ra[ii, oj] = best_i
                for oi in range(ho):
                    i0 = oi * stride - pad
                    i1 = i0 + k
                    if i0 < 0:
                        i0 = 0
                    if i1 > h:
                        i1 = h
                    for oj in range(wo):
                        best = rm[i0, oj]
                        best_i = i0
                        for ii in range(i0 + 1, i1):
                            v = rm[ii, oj]
                            if v > best:
                                best = v
                                best_i = ii
                        y[b, ch, oi, oj] = best
                        idx[b, ch, oi, oj] = best_i * w + ra[best_i, oj]
    return out, arg


def maxpool_backward(floating[:, :, :, ::1] dy, cnp.int64_t[:, :, :, ::1] arg, int h, int w):
    """Route pooled gradients back to the argmax positions (accumulating)."""
    cdef Py_ssize_t n = dy.shape[0], c = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, c, h * w), dtype=dtype)
    cdef floating[:, :, ::1] dx = out
    cdef Py_ssize_t b, ch, oi, oj
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oi in range(ho):
                    for oj in range(wo):
                        dx[b, ch, arg[b, ch, oi, oj]] += dy[b, ch, oi, oj]
    return out.reshape(n, c, h, w)


def mish_forward(floating[::1] x):
    """Mish ``x * tanh(softplus(x))`` and its derivative, in one pass.

    Uses ``tanh(log1p(e)) = e(e+2) / (e(e+2) + 2)`` with ``e = exp(x)``;
    above x = 20 the activation is the identity to working precision.
    """
    cdef Py_ssize_t i, n = x.shape[0]
    dtype = np.float32 if floating is float else np.float64
    out = np.empty(n, dtype=dtype)
    der = np.empty(n, dtype=dtype)
    cdef floating[::1] y = out
    cdef floating[::1] d = der
    cdef double v, e, q, t, sg
    with nogil:
        for i in range(n):
            v = x[i]
            if v > 20.0:
                y[i] = v
                d[i] = 1.0
                continue
            if floating is float:
                e = expf(<float>v)
            else:
                e = exp(v)
            q = e * (e + 2.0)
            t = q / (q + 2.0)
            sg = e / (1.0 + e)
            y[i] = v * t
            d[i] = t + v * (1.0 - t * t) * sg
    return out, der
