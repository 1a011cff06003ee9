"""Detection loss against ground truth.

Every ground-truth box is assigned to its single best anchor (by
size-only IoU) across all scales, at the grid cell containing its centre.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..engine import functional as F
from ..engine.tensor import Tensor


@dataclass(frozen=True)
class HardLossWeights:
    box: float = 1.0
    obj: float = 1.0
    noobj: float = 1.0
    cls: float = 1.0


@dataclass
class Targets:
    """Dense objectness targets plus the positive-cell list for one scale."""

    obj: np.ndarray  # [N, A, H, W] 0/1
    index: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]  # (b, a, i, j)
    box: np.ndarray  # [K, 4] (x offset, y offset, log w/aw, log h/ah)
    cls: np.ndarray  # [K] int


def build_targets(labels: Sequence[np.ndarray], anchors: np.ndarray,
                  grids: Sequence[tuple[int, int]]) -> list[Targets]:
    """Assign labels (rows ``class, cx, cy, w, h``) to anchors and cells.

    When two boxes land on the same (anchor, cell) the later one wins.
    """
    from .boxes import wh_iou

    anchors = np.asarray(anchors, dtype=np.float64)
    n_scales, n_anchors = anchors.shape[:2]
    flat = anchors.reshape(-1, 2)
    slots: list[dict] = [dict() for _ in range(n_scales)]
    for b, lab in enumerate(labels):
        lab = np.asarray(lab, dtype=np.float64).reshape(-1, 5)
        if not len(lab):
            continue
        best = np.argmax(wh_iou(lab[:, 3:5], flat), axis=1)
        for row, k in zip(lab, best):
            s, a = divmod(int(k), n_anchors)
            h, w = grids[s]
            j = min(int(row[1] * w), w - 1)
            i = min(int(row[2] * h), h - 1)
            aw, ah = flat[k]
            slots[s][(b, a, i, j)] = (row[1] * w - j, row[2] * h - i,
                                      np.log(row[3] / aw), np.log(row[4] / ah), int(row[0]))
    out = []
    for s, (h, w) in enumerate(grids):
        obj = np.zeros((len(labels), n_anchors, h, w))
        keys = sorted(slots[s])
        idx = tuple(np.array([k[d] for k in keys], dtype=np.int64) for d in range(4))
        if keys:
            obj[idx] = 1.0
        vals = np.array([slots[s][k] for k in keys], dtype=np.float64).reshape(-1, 5)
        out.append(Targets(obj, idx, vals[:, :4], vals[:, 4].astype(np.int64)))
    return out


def positive_rows(head: Tensor, n_anchors: int, index) -> Tensor:
    """Gather ``[K, 5+C]`` prediction rows at positive ``(b, a, i, j)`` cells."""
    n, ch, h, w = head.shape
    p = head.reshape(n, n_anchors, ch // n_anchors, h, w)
    b, a, i, j = index
    return p.transpose(0, 1, 3, 4, 2)[b, a, i, j]


def hard_loss(heads: Sequence[Tensor], labels: Sequence[np.ndarray], anchors: np.ndarray,
              weights: HardLossWeights = HardLossWeights()) -> tuple[Tensor, dict[str, float]]:
    """Objectness BCE over all cells, class CE and box squared error on positives.

    Each term is summed over cells and divided by the batch size. Returns
    the total and a float breakdown.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    n_anchors = anchors.shape[1]
    grids = [h.shape[2:] for h in heads]
    targets = build_targets(labels, anchors, grids)
    nb = max(len(labels), 1)
    total = None
    parts = {"obj": 0.0, "box": 0.0, "cls": 0.0}
    for head, t in zip(heads, targets):
        n, ch, h, w = head.shape
        p = head.reshape(n, n_anchors, ch // n_anchors, h, w)
        obj_logit = p[:, :, 4]
        wmap = np.where(t.obj > 0, weights.obj, weights.noobj).astype(head.dtype)
        l_obj = (F.bce_with_logits(obj_logit, t.obj) * wmap).sum()
        term = l_obj
        parts["obj"] += l_obj.item()
        if len(t.cls):
            rows = positive_rows(head, n_anchors, t.index)
            xy = rows[:, 0:2].sigmoid()
            wh = rows[:, 2:4]
            tgt = t.box.astype(head.dtype)
            d_xy = xy - tgt[:, 0:2]
            d_wh = wh - tgt[:, 2:4]
            l_box = ((d_xy * d_xy).sum() + (d_wh * d_wh).sum()) * weights.box
            onehot = np.eye(rows.shape[1] - 5, dtype=head.dtype)[t.cls]
            l_cls = -(F.log_softmax(rows[:, 5:], axis=-1) * onehot).sum() * weights.cls
            term = term + l_box + l_cls
            parts["box"] += l_box.item()
            parts["cls"] += l_cls.item()
        total = term if total is None else total + term
    total = total * (1.0 / nb)
    return total, {k: v / nb for k, v in parts.items()}
