"""Per-group channel budgets and thresholds."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..netgraph import Graph, group_members

MODES = ("proportional", "redundancy_weighted", "explicit")


class PruneError(ValueError):
    def __init__(self, message: str, group: int | None = None):
        self.group = group
        super().__init__(message)


@dataclass(frozen=True)
class GroupPlan:
    group: int
    convs: tuple[int, ...]
    n_channels: int  # N_i
    share: float  # p_i = N_i / N_total
    quota: int
    threshold: float  # t_i

    @property
    def ratio(self) -> float:
        """Realized per-group ratio ``quota / N_i``."""
        return self.quota / self.n_channels if self.n_channels else 0.0

    @property
    def capacity(self) -> int:
        """Most channels the group can lose while every conv keeps one."""
        return self.n_channels - len(self.convs)


@dataclass(frozen=True)
class PrunePlan:
    P: float
    mode: str
    groups: dict[int, GroupPlan] = field(default_factory=dict)

    @property
    def n_total(self) -> int:
        return sum(gp.n_channels for gp in self.groups.values())

    @property
    def total_quota(self) -> int:
        return sum(gp.quota for gp in self.groups.values())

    def group_of_conv(self) -> dict[int, int]:
        return {c: i for i, gp in self.groups.items() for c in gp.convs}


def largest_remainder(weights: Sequence[float], total: int) -> list[int]:
    """Integers proportional to ``weights`` summing to ``total`` (ties go to the earlier entry)."""
    w = np.asarray(weights, dtype=np.float64)
    if total == 0 or w.sum() == 0:
        return [0] * len(w)
    exact = np.round(w * (total / w.sum()), 9)
    base = np.floor(exact).astype(int)
    rest = total - int(base.sum())
    order = sorted(range(len(w)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return [int(b) for b in base]


def _capped(weights: Sequence[float], total: int, caps: Sequence[int]) -> list[int]:
    """Largest-remainder allocation, re-spreading anything above a cap over the others."""
    quotas = [0] * len(weights)
    free = [i for i in range(len(weights)) if caps[i] > 0]
    remaining = total
    while remaining > 0 and free:
        share = largest_remainder([weights[i] if weights[i] > 0 else 0.0 for i in free], remaining)
        if sum(share) == 0:
            share = largest_remainder([caps[i] - quotas[i] for i in free], remaining)
        over = False
        for i, s in zip(free, share):
            take = min(s, caps[i] - quotas[i])
            over |= take < s
            quotas[i] += take
        remaining = total - sum(quotas)
        free = [i for i in free if quotas[i] < caps[i]]
        if not over:
            break
    return quotas


def _abs_sorted(gammas: Mapping[int, np.ndarray], convs) -> np.ndarray:
    if not convs:
        return np.zeros(0)
    return np.sort(np.concatenate([np.abs(np.asarray(gammas[c], np.float64)).reshape(-1) for c in convs]))


def plan_thresholds(g: Graph, gammas: Mapping[int, np.ndarray], P: float, mode: str = "proportional",
                    explicit_ratios: Sequence[float] | None = None) -> PrunePlan:
    """Channel quota and |gamma| threshold per group.

    proportional: quotas are ``P * N_i`` reconciled by largest remainder to
    ``round(P * N_total)``. redundancy_weighted: the same total, spread in
    proportion to each group's count of channels at or below the global
    P-quantile of |gamma|. explicit: ``round(ratio_i * N_i)``.

    Raises :class:`PruneError` naming the group when a quota leaves some
    conv in it without channels.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not 0 <= P < 1:
        raise ValueError(f"total prune ratio must lie in [0, 1), got {P}")
    members = group_members(g)
    missing = [c for c in g.prunable_convs if c not in gammas]
    if missing:
        raise ValueError(f"no gammas for conv(s) {missing[:5]}")
    for c in g.prunable_convs:
        if np.asarray(gammas[c]).size != g.channels[c]:
            raise ValueError(f"conv {c} has {g.channels[c]} channels but {np.asarray(gammas[c]).size} gammas")
    ids = sorted(members)
    sizes = [sum(g.channels[c] for c in members[i]) for i in ids]
    n_total = sum(sizes)
    target = int(round(P * n_total))
    if mode == "proportional":
        quotas = largest_remainder(sizes, target)
    elif mode == "redundancy_weighted":
        allg = _abs_sorted(gammas, g.prunable_convs)
        q = allg[target - 1] if target > 0 else -np.inf
        counts = [int(np.sum(_abs_sorted(gammas, members[i]) <= q)) for i in ids]
        caps = [s - len(members[i]) for s, i in zip(sizes, ids)]
        quotas = _capped(counts, target, caps)
    else:
        if explicit_ratios is None or len(explicit_ratios) != len(ids):
            raise ValueError(f"explicit mode needs {len(ids)} per-group ratios")
        for i, r in zip(ids, explicit_ratios):
            if not 0 <= r < 1:
                raise PruneError(f"group {i}: ratio {r} outside [0, 1)", i)
        quotas = [int(round(r * s)) for r, s in zip(explicit_ratios, sizes)]
        P = sum(quotas) / n_total if n_total else 0.0
    groups: dict[int, GroupPlan] = {}
    for i, size, quota in zip(ids, sizes, quotas):
        if quota > size - len(members[i]):
            raise PruneError(
                f"group {i} would lose all channels of some layer: quota {quota} of {size} channels "
                f"leaves fewer than one per conv ({len(members[i])} convs)", i)
        vals = _abs_sorted(gammas, members[i])
        t = float(vals[quota - 1]) if quota > 0 else 0.0
        groups[i] = GroupPlan(i, tuple(members[i]), size, size / n_total if n_total else 0.0, quota, t)
    return PrunePlan(float(P), mode, groups)
