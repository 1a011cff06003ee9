"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def _padded(x, k, stride, pad, ho, wo, fill=0.0):
    n, c, h, w = x.shape
    bottom = max(0, (ho - 1) * stride + k - pad - h)
    right = max(0, (wo - 1) * stride + k - pad - w)
    return np.pad(x, ((0, 0), (0, 0), (pad, bottom), (pad, right)), constant_values=fill)


def im2col(x, k, stride, pad, ho, wo):
    n, c, h, w = x.shape
    xp = _padded(x, k, stride, pad, ho, wo)
    cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]
            cols[:, ki, kj] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * ho * wo)


def col2im(cols, n, c, h, w, k, stride, pad, ho, wo):
    bottom = max(0, (ho - 1) * stride + k - pad - h)
    right = max(0, (wo - 1) * stride + k - pad - w)
    dxp = np.zeros((n, c, h + pad + bottom, w + pad + right), dtype=cols.dtype)
    cols6 = cols.reshape(c, k, k, n, ho, wo)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += (
                cols6[:, ki, kj].transpose(1, 0, 2, 3))
    return np.ascontiguousarray(dxp[:, :, pad:pad + h, pad:pad + w])


def maxpool_forward(x, k, stride, pad, ho, wo):
    n, c, h, w = x.shape
    xp = _padded(x, k, stride, pad, ho, wo, fill=-np.inf)
    best = np.full((n, c, ho, wo), -np.inf, dtype=x.dtype)
    arg = np.full((n, c, ho, wo), -1, dtype=np.int64)
    rows = np.arange(ho)[:, None] * stride - pad
    cols = np.arange(wo)[None, :] * stride - pad
    for ki in range(k):
        for kj in range(k):
            v = xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]
            better = v > best
            best = np.where(better, v, best)
            flat = (rows + ki) * w + (cols + kj)
            arg = np.where(better, flat, arg)
    return best, arg


def maxpool_backward(dy, arg, h, w):
    n, c = dy.shape[:2]
    offsets = (np.arange(n * c, dtype=np.int64) * (h * w)).reshape(n, c, 1, 1)
    flat = np.bincount((arg + offsets).ravel(), weights=dy.ravel(), minlength=n * c * h * w)
    return flat.astype(dy.dtype, copy=False).reshape(n, c, h, w)


def mish_forward(x):
    sp = np.log1p(np.exp(np.clip(x, -20.0, 20.0)))
    sp = np.where(x > 20.0, x, sp)
    sp = np.where(x < -20.0, np.exp(np.minimum(x, 0.0)), sp)
    t = np.tanh(sp)
    sg = 0.5 * (1.0 + np.tanh(0.5 * x))
    return x * t, t + x * (1.0 - t * t) * sg
