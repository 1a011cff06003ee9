"""Box types and overlap measures. Boxes are (cx, cy, w, h) in normalized units."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoxLabel:
    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0 < self.w <= 1 and 0 < self.h <= 1):
            raise ValueError(f"box size must lie in (0, 1], got w={self.w}, h={self.h}")

    def xyxy(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    def as_array(self) -> np.ndarray:
        return np.array([self.class_id, self.cx, self.cy, self.w, self.h], dtype=np.float64)


@dataclass(frozen=True)
class Detection:
    """A decoded, scored box."""

    class_id: int
    score: float
    cx: float
    cy: float
    w: float
    h: float

    def box(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)


def iou_xyxy(a, b) -> float:
    """IoU of two corner-form boxes ``(x0, y0, x1, y1)``."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def iou(a: BoxLabel, b: BoxLabel) -> float:
    return iou_xyxy(a.xyxy(), b.xyxy())


def to_xyxy(boxes: np.ndarray) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64)
    half = b[..., 2:4] / 2
    return np.concatenate([b[..., 0:2] - half, b[..., 0:2] + half], axis=-1)


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of center-form boxes ``a[..., 4]`` vs ``b[M, 4]`` -> ``[..., M]``."""
    a = to_xyxy(a)[..., None, :]
    b = to_xyxy(b)
    iw = np.clip(np.minimum(a[..., 2], b[:, 2]) - np.maximum(a[..., 0], b[:, 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[:, 3]) - np.maximum(a[..., 1], b[:, 1]), 0, None)
    inter = iw * ih
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a + area_b - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def wh_iou(wh: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """IoU of boxes and anchors when both are centred at the origin: ``[N, K]``."""
    wh = np.asarray(wh, dtype=np.float64)[:, None, :]
    anchors = np.asarray(anchors, dtype=np.float64)[None]
    inter = np.minimum(wh[..., 0], anchors[..., 0]) * np.minimum(wh[..., 1], anchors[..., 1])
    return inter / (wh[..., 0] * wh[..., 1] + anchors[..., 0] * anchors[..., 1] - inter)
