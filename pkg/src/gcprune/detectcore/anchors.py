"""Anchor boxes from k-means over label sizes with a 1 - IoU distance."""
from __future__ import annotations

import numpy as np

from .boxes import wh_iou

PER_SCALE = 3
N_SCALES = 3


def kmeans_anchors(wh: np.ndarray, k: int = PER_SCALE * N_SCALES, max_iter: int = 300) -> np.ndarray:
    """Cluster ``(w, h)`` pairs; returns ``k`` centroids sorted by area.

    Initial centroids are the area quantiles of the data, so the result
    depends only on the input.
    """
    wh = np.asarray(wh, dtype=np.float64).reshape(-1, 2)
    if len(wh) < k:
        raise ValueError(f"need at least {k} boxes for {k} anchors, got {len(wh)}")
    order = np.argsort(wh[:, 0] * wh[:, 1], kind="stable")
    picks = order[np.round(np.linspace(0, len(wh) - 1, 2 * k + 1)[1::2]).astype(int)]
    cent = wh[picks].copy()
    assign = np.full(len(wh), -1)
    for _ in range(max_iter):
        new = np.argmax(wh_iou(wh, cent), axis=1)
        if np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            members = wh[assign == j]
            if len(members):
                cent[j] = np.median(members, axis=0)
    return cent[np.argsort(cent[:, 0] * cent[:, 1], kind="stable")]


def anchors_per_scale(cent: np.ndarray) -> np.ndarray:
    """Reshape area-sorted centroids to ``[scale, anchor, 2]``, smallest at stride 8."""
    return np.asarray(cent, dtype=np.float64).reshape(N_SCALES, -1, 2)


def default_anchors() -> np.ndarray:
    """Fallback anchors (normalized) used when a dataset is too small to cluster."""
    base = np.array([[0.05, 0.06], [0.08, 0.10], [0.11, 0.08],
                     [0.15, 0.17], [0.20, 0.25], [0.28, 0.20],
                     [0.33, 0.36], [0.42, 0.30], [0.45, 0.48]])
    return anchors_per_scale(base)
