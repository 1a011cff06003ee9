"""Per-class average precision and mAP at an IoU threshold."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .boxes import Detection, box_iou


@dataclass
class MapResult:
    ap: dict[int, float]
    mAP: float
    n_gt: dict[int, int]
    excluded: list[int] = field(default_factory=list)  # classes with no ground truth


def average_precision(recall: np.ndarray, precision: np.ndarray, method: str = "all") -> float:
    """Area under the PR curve with the precision envelope (``all``) or 11-point sampling."""
    if method == "11point":
        return float(np.mean([precision[recall >= r].max() if (recall >= r).any() else 0.0
                              for r in np.linspace(0, 1, 11)]))
    if method != "all":
        raise ValueError(f"unknown AP method {method!r}")
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _as_rows(gt) -> np.ndarray:
    rows = [[g.class_id, g.cx, g.cy, g.w, g.h] if hasattr(g, "class_id") else list(g) for g in gt]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 5)


def eval_map(detections: Sequence[Sequence[Detection]], ground_truth: Sequence, iou_thresh: float = 0.5,
             n_classes: int | None = None, method: str = "all") -> MapResult:
    """VOC-style evaluation.

    Per class, detections are ranked by confidence (ties keep their input
    order: image index, then position). A detection is a true positive when
    its best-overlapping same-class box in that image reaches ``iou_thresh``
    and has not been claimed by a higher-ranked detection.
    """
    if len(detections) != len(ground_truth):
        raise ValueError("detections and ground truth must cover the same images")
    gts = [_as_rows(g) for g in ground_truth]
    classes = set(int(c) for g in gts for c in g[:, 0])
    classes |= {d.class_id for ds in detections for d in ds}
    if n_classes is not None:
        classes |= set(range(n_classes))
    ap: dict[int, float] = {}
    n_gt: dict[int, int] = {}
    excluded: list[int] = []
    # one IoU matrix per image; overlaps with other-class boxes are masked out below
    per_image = []
    for ds, g in zip(detections, gts):
        if ds and len(g):
            ov = box_iou(np.array([d.box() for d in ds]), g[:, 1:5])
            ov = np.where(np.array([d.class_id for d in ds])[:, None] == g[None, :, 0], ov, -1.0)
        else:
            ov = None
        per_image.append(ov)
    for c in sorted(classes):
        cols = [np.flatnonzero(g[:, 0] == c) for g in gts]
        total = sum(len(k) for k in cols)
        n_gt[c] = total
        if total == 0:
            excluded.append(c)
            continue
        cand = []  # (score, image, position, best gt column, best overlap)
        for img, ds in enumerate(detections):
            ov, k = per_image[img], cols[img]
            for pos, d in enumerate(ds):
                if d.class_id != c:
                    continue
                if ov is None or not len(k):
                    cand.append((d.score, img, pos, -1, 0.0))
                    continue
                row = ov[pos, k]
                b = int(np.argmax(row))
                cand.append((d.score, img, pos, b, float(row[b])))
        cand.sort(key=lambda t: (-t[0], t[1], t[2]))
        claimed = [np.zeros(len(k), dtype=bool) for k in cols]
        tp = np.zeros(len(cand))
        for rank, (_, img, _, best, top) in enumerate(cand):
            if best >= 0 and top >= iou_thresh and not claimed[img][best]:
                claimed[img][best] = True
                tp[rank] = 1.0
        order = cand
        if not len(order):
            ap[c] = 0.0
            continue
        ctp = np.cumsum(tp)
        recall = ctp / total
        precision = ctp / np.arange(1, len(order) + 1)
        ap[c] = average_precision(recall, precision, method)
    m = float(np.mean(list(ap.values()))) if ap else 0.0
    return MapResult(ap, m, n_gt, excluded)
