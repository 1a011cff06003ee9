"""Weighted L1 penalty on batch-norm scales."""
from __future__ import annotations

import numpy as np


def sparse_penalty(gammas, rates) -> tuple[float, np.ndarray]:
    """``sum(rates * |gammas|)`` and its subgradient ``rates * sign(gammas)`` (sign(0) = 0)."""
    g = np.asarray(gammas, dtype=np.float64).reshape(-1)
    s = np.asarray(getattr(rates, "rates", rates), dtype=np.float64).reshape(-1)
    if g.shape != s.shape:
        raise ValueError(f"{len(g)} gammas but {len(s)} rates")
    return float(np.sum(s * np.abs(g))), s * np.sign(g)
