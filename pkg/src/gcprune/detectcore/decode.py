"""Anchor decoding, overlap suppression and teacher/ground-truth candidate matching.

A head output has shape ``[N, A*(5+C), H, W]``; per anchor the channel
layout is ``tx, ty, tw, th, objectness, class logits...``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..engine.tensor import _sigmoid
from .boxes import Detection, box_iou

NMS_IOU = 0.45


def split_head(raw: np.ndarray, n_anchors: int) -> np.ndarray:
    """``[N, A*(5+C), H, W]`` -> ``[N, A, 5+C, H, W]``."""
    n, ch, h, w = raw.shape
    if ch % n_anchors:
        raise ValueError(f"head width {ch} is not a multiple of {n_anchors} anchors")
    return raw.reshape(n, n_anchors, ch // n_anchors, h, w)


def grid_offsets(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    return np.arange(w, dtype=np.float64)[None, :], np.arange(h, dtype=np.float64)[:, None]


@dataclass
class DecodedScale:
    boxes: np.ndarray  # [N, A, H, W, 4] normalized cx, cy, w, h
    objectness: np.ndarray  # [N, A, H, W]
    class_prob: np.ndarray  # [N, A, H, W, C]

    @property
    def scores(self) -> np.ndarray:
        return self.objectness[..., None] * self.class_prob


def decode_scale(raw: np.ndarray, anchors: np.ndarray) -> DecodedScale:
    """Sigmoid cell offsets, exponential size scaling, softmax classes."""
    anchors = np.asarray(anchors, dtype=np.float64)
    p = split_head(np.asarray(raw, dtype=np.float64), len(anchors))
    h, w = p.shape[-2:]
    gx, gy = grid_offsets(h, w)
    cx = (_sigmoid(p[:, :, 0]) + gx) / w
    cy = (_sigmoid(p[:, :, 1]) + gy) / h
    bw = anchors[None, :, 0, None, None] * np.exp(np.clip(p[:, :, 2], -30, 30))
    bh = anchors[None, :, 1, None, None] * np.exp(np.clip(p[:, :, 3], -30, 30))
    logits = np.moveaxis(p[:, :, 5:], 2, -1)
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return DecodedScale(np.stack([cx, cy, bw, bh], axis=-1), _sigmoid(p[:, :, 4]),
                        z / z.sum(axis=-1, keepdims=True))


def nms(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float = NMS_IOU) -> list[int]:
    """Greedy suppression; returns kept indices in descending score order."""
    order = list(np.argsort(-scores, kind="stable"))
    keep: list[int] = []
    while order:
        i = order.pop(0)
        keep.append(int(i))
        if not order:
            break
        rest = np.array(order)
        ov = box_iou(boxes[i][None], boxes[rest])[0]
        order = [int(j) for j, o in zip(rest, ov) if o <= iou_thresh]
    return keep


def decode_predictions(heads: Sequence[np.ndarray], anchors: np.ndarray, conf_thresh: float = 0.01,
                       nms_iou: float = NMS_IOU, max_det: int = 100) -> list[list[Detection]]:
    """Per image: boxes scoring ``objectness * class prob >= conf_thresh`` after per-class NMS."""
    scales = [decode_scale(np.asarray(getattr(h, "data", h)), anchors[s]) for s, h in enumerate(heads)]
    n = scales[0].boxes.shape[0] if scales else 0
    out: list[list[Detection]] = []
    for b in range(n):
        boxes = np.concatenate([s.boxes[b].reshape(-1, 4) for s in scales])
        scores = np.concatenate([s.scores[b].reshape(-1, s.scores.shape[-1]) for s in scales])
        cand, cls = np.nonzero(scores >= conf_thresh)
        dets: list[Detection] = []
        for c in np.unique(cls):
            sel = cand[cls == c]
            sc = scores[sel, c]
            for k in nms(boxes[sel], sc, nms_iou):
                bx = boxes[sel[k]]
                dets.append(Detection(int(c), float(sc[k]), *map(float, bx)))
        dets.sort(key=lambda d: -d.score)
        out.append(dets[:max_det])
    return out


def match_candidates(teacher_heads: Sequence[np.ndarray], anchors: np.ndarray,
                     ground_truth: Sequence[np.ndarray], iou_thresh: float = 0.5,
                     mode: str = "gt", teacher_conf: float = 0.25) -> list[tuple[np.ndarray, ...]]:
    """Positions whose teacher-decoded box overlaps a reference box by ``>= iou_thresh``.

    ``mode="gt"`` compares against ground-truth boxes (label rows
    ``class, cx, cy, w, h``); ``mode="teacher"`` against the teacher's own
    surviving detections at ``teacher_conf``. Returns per scale a tuple of
    index arrays ``(image, anchor, row, col)``.
    """
    if mode not in ("gt", "teacher"):
        raise ValueError(f"unknown matching mode {mode!r}")
    heads = [np.asarray(getattr(h, "data", h)) for h in teacher_heads]
    if mode == "teacher":
        dets = decode_predictions(heads, anchors, teacher_conf)
        refs = [np.array([d.box() for d in ds]).reshape(-1, 4) for ds in dets]
    else:
        refs = [np.asarray(g, dtype=np.float64).reshape(-1, 5)[:, 1:5] for g in ground_truth]
    out = []
    for s, raw in enumerate(heads):
        boxes = decode_scale(raw, anchors[s]).boxes
        hit = np.zeros(boxes.shape[:4], dtype=bool)
        for b, ref in enumerate(refs):
            if len(ref):
                hit[b] = (box_iou(boxes[b], ref) >= iou_thresh).any(axis=-1)
        out.append(np.nonzero(hit))
    return out
