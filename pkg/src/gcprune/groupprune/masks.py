"""Channel masks: threshold masks per group and voted masks for residual-coupled convs."""
from __future__ import annotations

from typing import Iterator, Mapping, MutableMapping, Sequence

import numpy as np

from ..netgraph import Graph
from .plan import PrunePlan


class MaskSet(MutableMapping):
    """conv id -> boolean mask over its output channels (True = retained)."""

    def __init__(self, masks: Mapping[int, np.ndarray] | None = None):
        self._m: dict[int, np.ndarray] = {}
        for k, v in (masks or {}).items():
            self[k] = v

    def __getitem__(self, cid: int) -> np.ndarray:
        return self._m[cid]

    def __setitem__(self, cid: int, mask) -> None:
        self._m[int(cid)] = np.asarray(mask, dtype=bool).reshape(-1).copy()

    def __delitem__(self, cid: int) -> None:
        del self._m[cid]

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self._m))

    def __len__(self) -> int:
        return len(self._m)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MaskSet) or list(self) != list(other):
            return False
        return all(np.array_equal(self[c], other[c]) for c in self)

    def __repr__(self) -> str:
        return f"MaskSet({len(self)} convs, {self.n_pruned()} pruned)"

    def copy(self) -> "MaskSet":
        return MaskSet(self._m)

    @classmethod
    def all_ones(cls, g: Graph) -> "MaskSet":
        return cls({c: np.ones(g.channels[c], bool) for c in g.prunable_convs})

    def n_pruned(self, convs: Sequence[int] | None = None) -> int:
        return int(sum((~self[c]).sum() for c in (convs if convs is not None else self)))

    def check(self, g: Graph) -> None:
        """Lengths match the graph, no mask is empty, coupled convs agree."""
        for c in self:
            if len(self[c]) != g.channels[c]:
                raise ValueError(f"mask for conv {c} has length {len(self[c])}, expected {g.channels[c]}")
            if not self[c].any():
                raise ValueError(f"mask for conv {c} retains no channels")
        for s in g.coupled:
            ms = [self[c] for c in s if c in self]
            if any(not np.array_equal(ms[0], m) for m in ms[1:]):
                raise ValueError(f"coupled convs {sorted(s.conv_ids)} carry different masks")


def build_masks(g: Graph, gammas: Mapping[int, np.ndarray], plan: PrunePlan) -> MaskSet:
    """Prune each group's ``quota`` smallest-|gamma| channels.

    Ties are broken by conv id then channel index. A channel that would be
    the last one retained in its conv is skipped and the next candidate is
    taken, so each quota is met exactly.
    """
    masks = MaskSet.all_ones(g)
    for gp in plan.groups.values():
        if gp.quota == 0:
            continue
        cand = [(abs(float(v)), c, j) for c in gp.convs
                for j, v in enumerate(np.asarray(gammas[c]).reshape(-1))]
        cand.sort()
        left = {c: g.channels[c] for c in gp.convs}
        taken = 0
        for _, c, j in cand:
            if taken == gp.quota:
                break
            if left[c] == 1:
                continue
            masks[c][j] = False
            left[c] -= 1
            taken += 1
        if taken != gp.quota:  # unreachable while plan capacity checks hold
            raise AssertionError(f"group {gp.group}: met {taken} of quota {gp.quota}")
    return masks


def vote_public_mask(masks: Sequence[np.ndarray], gammas: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Channel j is pruned when at least half of the masks prune it (``Z_j >= N/2``).

    If the vote would prune everything, the channel with the largest mean
    |gamma| over the set is kept (without gammas: fewest zeros, then lowest
    index).
    """
    if not len(masks):
        raise ValueError("vote over no masks")
    lengths = {np.asarray(m).size for m in masks}
    if len(lengths) != 1:
        raise ValueError(f"masks have different lengths {sorted(lengths)}")
    mat = np.array([np.asarray(m, dtype=bool).reshape(-1) for m in masks])
    n = mat.shape[0]
    zeros = (~mat).sum(axis=0)
    public = 2 * zeros < n
    if not public.any():
        if gammas is not None:
            score = np.mean([np.abs(np.asarray(gm, np.float64)).reshape(-1) for gm in gammas], axis=0)
            keep = int(np.argmax(score))
        else:
            keep = int(np.argmin(zeros))
        public[keep] = True
    return public


def finalize_masks(g: Graph, pre: MaskSet, gammas: Mapping[int, np.ndarray] | None = None) -> MaskSet:
    """Give every coupled set its voted public mask; other convs keep theirs."""
    out = pre.copy()
    for s in g.coupled:
        ids = [c for c in s if c in pre]
        if not ids:
            continue
        gm = [gammas[c] for c in ids] if gammas is not None else None
        public = vote_public_mask([pre[c] for c in ids], gm)
        for c in ids:
            out[c] = public
    out.check(g)
    return out
