"""Spatial attention maps (channel-summed squared activations) and their distance loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..engine import functional as F
from ..engine.tensor import Tensor

ZERO_NORM = 1e-12


@dataclass(frozen=True)
class AttentionMap:
    q: np.ndarray
    source_scale: tuple[int, int]
    group: int = 0


def attention_map(feature, group: int = 0) -> AttentionMap:
    """``sum_c A_c^2`` over a ``[C, H, W]`` feature, flattened row-major, unit L2 norm."""
    a = np.asarray(getattr(feature, "data", feature), dtype=np.float64)
    if a.ndim != 3 or a.shape[0] < 1:
        raise ValueError(f"feature must be [C, H, W] with C >= 1, got {a.shape}")
    f = (a * a).sum(axis=0).reshape(-1)
    n = np.sqrt(np.dot(f, f))
    q = f / n if n >= ZERO_NORM else np.zeros_like(f)
    return AttentionMap(q, tuple(a.shape[1:]), group)


def attention_vectors(feature: Tensor) -> Tensor:
    """Batched, differentiable form of :func:`attention_map`: ``[N, C, H, W] -> [N, H*W]``."""
    n = feature.shape[0]
    f = (feature * feature).sum(axis=1).reshape(n, -1)
    nrm = F.l2norm(f, axis=1)
    small = nrm.data < ZERO_NORM
    safe = nrm + np.where(small, 1.0, 0.0).astype(nrm.dtype)
    q = f / safe.reshape(n, 1)
    if small.any():
        q = q * (~small).astype(q.dtype).reshape(n, 1)
    return q


def _vec(x) -> Tensor:
    if isinstance(x, AttentionMap):
        x = x.q
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    return t.reshape(1, -1) if t.ndim == 1 else t


def attention_loss(teacher_maps: Sequence, student_maps: Sequence, betas: Sequence[float]) -> Tensor:
    """``sum_i beta_i * ||q_T^i - q_S^i||_2``; batched maps ``[N, HW]`` are averaged over N."""
    if not (len(teacher_maps) == len(student_maps) == len(betas)):
        raise ValueError(f"{len(teacher_maps)} teacher maps, {len(student_maps)} student maps, "
                         f"{len(betas)} betas")
    total: Tensor | None = None
    for i, (t, s, beta) in enumerate(zip(teacher_maps, student_maps, betas)):
        qt, qs = _vec(t), _vec(s)
        if qt.shape != qs.shape:
            raise ValueError(f"group {i + 1}: attention lengths differ {qt.shape} vs {qs.shape}")
        if beta == 0:
            continue
        d = F.l2norm(qs - Tensor(np.asarray(qt.data, dtype=qs.dtype)), axis=1)
        term = d.sum() * (float(beta) / qs.shape[0])
        total = term if total is None else total + term
    return total if total is not None else Tensor(np.zeros(()))
