"""Differentiable layer primitives used by the detection graphs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import kernels
from .tensor import Tensor, _sigmoid

LEAKY_SLOPE = 0.1
BN_MOMENTUM = 0.03


def same_pad(k: int) -> int:
    return (k - 1) // 2


def out_size(n: int, k: int, stride: int) -> int:
    return (n + 2 * same_pad(k) - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, stride: int = 1, bias: Tensor | None = None) -> Tensor:
    """Same-padded 2-d cross-correlation, NCHW input, OIHW weights."""
    if stride not in (1, 2):
        raise ValueError(f"conv stride must be 1 or 2, got {stride}")
    n, c, h, wd = x.shape
    cout, cin, k, k2 = w.shape
    if cin != c or k != k2:
        raise ValueError(f"conv weight {w.shape} does not fit input {x.shape}")
    pad = same_pad(k)
    ho, wo = out_size(h, k, stride), out_size(wd, k, stride)
    xd = np.ascontiguousarray(x.data)
    if k == 1 and stride == 1:
        cols = xd.transpose(1, 0, 2, 3).reshape(c, n * h * wd)
    else:
        cols = kernels.im2col(xd, k, stride, pad, ho, wo)
    w2 = w.data.reshape(cout, -1)
    y = (w2 @ cols).reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        y = y + bias.data[None, :, None, None]
    y = np.ascontiguousarray(y)

    def bw(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(cout, -1)
        dw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = w2.T @ g2
            if k == 1 and stride == 1:
                dx = np.ascontiguousarray(dcols.reshape(c, n, h, wd).transpose(1, 0, 2, 3))
            else:
                dx = kernels.col2im(np.ascontiguousarray(dcols), n, c, h, wd, k, stride, pad, ho, wo)
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor._make(y, parents, bw)


@dataclass
class BNParams:
    """Per-channel batch-norm scale/shift (trainable) and running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = field(default=BN_MOMENTUM)

    def __post_init__(self):
        c = self.gamma.size
        if not (self.beta.size == c == self.running_mean.size == self.running_var.size):
            raise ValueError("batch-norm vectors must share one channel count")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @classmethod
    def create(cls, channels: int, dtype=np.float64, eps: float = 1e-5) -> "BNParams":
        return cls(Tensor(np.ones(channels, dtype), requires_grad=True),
                   Tensor(np.zeros(channels, dtype), requires_grad=True),
                   np.zeros(channels, dtype), np.ones(channels, dtype), eps)

    @property
    def channels(self) -> int:
        return self.gamma.size


def batchnorm(x: Tensor, p: BNParams, training: bool) -> Tensor:
    """``gamma * (x - mu) / sqrt(var + eps) + beta`` per channel of an NCHW tensor."""
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ValueError(f"batch-norm over {p.channels} channels got input {x.shape}")
    n, c, h, w = x.shape
    m = n * h * w
    if m == 0:
        raise ValueError("batch-norm channel has no elements")
    xd = x.data
    gamma = p.gamma.data.reshape(1, c, 1, 1)
    if training:
        if m < 2:
            raise ValueError("training-mode batch-norm needs at least 2 values per channel")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        p.running_mean *= 1.0 - p.momentum
        p.running_mean += p.momentum * mu
        p.running_var *= 1.0 - p.momentum
        p.running_var += p.momentum * var * (m / (m - 1))
    else:
        mu, var = p.running_mean, p.running_var
    invstd = (1.0 / np.sqrt(var + p.eps)).astype(xd.dtype, copy=False).reshape(1, c, 1, 1)
    xhat = (xd - mu.reshape(1, c, 1, 1).astype(xd.dtype, copy=False)) * invstd
    y = gamma * xhat + p.beta.data.reshape(1, c, 1, 1)

    def bw(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma
        if training:
            dx = invstd / m * (m * dxhat - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                               - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
        else:
            dx = dxhat * invstd
        return dx, dgamma, dbeta

    return Tensor._make(y, (x, p.gamma, p.beta), bw)


def mish(x: Tensor) -> Tensor:
    """``x * tanh(softplus(x))``; softplus guarded at |x| > 20."""
    xd = np.ascontiguousarray(x.data)
    y, dydx = kernels.mish_forward(xd.reshape(-1))
    return Tensor._make(y.reshape(xd.shape), (x,), lambda g: (g * dydx.reshape(xd.shape),))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    xd = x.data
    scale = np.where(xd > 0, 1.0, slope).astype(xd.dtype)
    return Tensor._make(xd * scale, (x,), lambda g: (g * scale,))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add needs identical shapes, got {a.shape} and {b.shape}")
    return a + b


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not xs:
        raise ValueError("concat of nothing")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(ref) or any(t.shape[d] != ref[d] for d in range(len(ref)) if d != axis):
            raise ValueError(f"concat shape mismatch: {ref} vs {t.shape}")
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum(sizes)[:-1]
    y = np.concatenate([t.data for t in xs], axis=axis)
    return Tensor._make(y, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    n, c, h, w = x.shape
    y = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    return Tensor._make(
        y, (x,), lambda g: (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),))


def maxpool2d(x: Tensor, k: int, stride: int = 1) -> Tensor:
    """Max pool with same padding (output spatial size ``ceil(H / stride)``)."""
    n, c, h, w = x.shape
    pad = same_pad(k)
    ho, wo = -(-h // stride), -(-w // stride)
    y, arg = kernels.maxpool_forward(np.ascontiguousarray(x.data), k, stride, pad, ho, wo)
    return Tensor._make(
        y, (x,), lambda g: (kernels.maxpool_backward(np.ascontiguousarray(g), arg, h, w),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    sm = np.exp(y)
    return Tensor._make(y, (x,), lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return log_softmax(x, axis).exp()


def bce_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy on logits (numerically stable)."""
    z = logits.data
    t = np.asarray(target, dtype=z.dtype)
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    return Tensor._make(loss, (logits,), lambda g: (g * (_sigmoid(z) - t),))


def l2norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at a zero vector is taken as 0."""
    xd = x.data
    nrm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    safe = np.where(nrm > 0, nrm, 1.0)

    def bw(g):
        return (np.where(nrm > 0, xd / safe, 0.0) * np.expand_dims(g, axis),)

    return Tensor._make(np.squeeze(nrm, axis=axis), (x,), bw)
