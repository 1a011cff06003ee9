"""Teacher-student soft targets on class distributions and decoded boxes."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..engine import functional as F
from ..engine.tensor import Tensor


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def soft_class_loss(teacher_logits: Sequence, student_logits: Sequence, T: float = 3.0) -> Tensor:
    """Sum over scales of the mean per-prior KL(softmax(t/T) || softmax(s/T)).

    Each scale is ``[..., C]``; every leading position is one prior. A
    scale without priors contributes 0.
    """
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    if len(teacher_logits) != len(student_logits):
        raise ValueError("teacher and student must have the same number of scales")
    total: Tensor | None = None
    for t, s in zip(teacher_logits, student_logits):
        s = _as_tensor(s)
        t = np.asarray(getattr(t, "data", t), dtype=s.dtype)
        if t.shape != s.shape:
            raise ValueError(f"logit shapes differ: {t.shape} vs {s.shape}")
        k = int(np.prod(t.shape[:-1]))
        if k == 0:
            continue
        # same scaling and log-softmax as the student side, so identical logits give exactly 0
        log_m = F.log_softmax(Tensor(t * (1.0 / T)), axis=-1).data
        m = np.exp(log_m)
        n = F.log_softmax(s * (1.0 / T), axis=-1)
        term = ((Tensor(log_m) - n) * Tensor(m)).sum() * (1.0 / k)
        total = term if total is None else total + term
    return total if total is not None else Tensor(np.zeros(()))


def soft_box_loss(teacher_boxes: Sequence, student_boxes: Sequence,
                  matched_indices: Sequence[tuple[np.ndarray, ...]]) -> Tensor:
    """Sum over scales and matched positions of ``||box_t - box_s||_2``.

    ``*_boxes`` are per-scale ``[..., 4]`` arrays/tensors of decoded
    ``(x, y, w, h)``; ``matched_indices`` index their leading axes.
    """
    total: Tensor | None = None
    for t, s, idx in zip(teacher_boxes, student_boxes, matched_indices):
        if len(idx) == 0 or len(idx[0]) == 0:
            continue
        s = _as_tensor(s)
        t = np.asarray(getattr(t, "data", t), dtype=s.dtype)
        d = s[tuple(idx)] - Tensor(t[tuple(idx)])
        term = F.l2norm(d, axis=-1).sum()
        total = term if total is None else total + term
    return total if total is not None else Tensor(np.zeros(()))


def total_distill_loss(hard, soft_cls, soft_box, at):
    """``hard + (soft_cls + soft_box) + at``; a non-finite component aborts with its name."""
    for name, v in (("hard", hard), ("soft_cls", soft_cls), ("soft_box", soft_box), ("at", at)):
        val = v.item() if isinstance(v, Tensor) else float(v)
        if not math.isfinite(val):
            raise ValueError(f"distillation loss component '{name}' is not finite ({val})")
    return hard + (soft_cls + soft_box) + at
