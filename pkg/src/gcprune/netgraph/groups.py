"""Partition of a detection graph into pruning groups.

Default layout (five groups): backbone nodes at stride <= 8, at stride 16,
and at stride >= 32 form groups 1-3; the feature-enhancement path is group 4
and the detection-head path is group 5. A node's ``group=`` tag overrides
everything, a ``part=backbone|neck|head`` tag selects the family, and
untagged graphs fall back to stride/topology inference.
"""
from __future__ import annotations

from typing import TYPE_CHECKING

from .graph import GraphError

if TYPE_CHECKING:
    from .graph import Graph

PARTS = ("backbone", "neck", "head")


def backbone_group(stride: float) -> int:
    if stride <= 8:
        return 1
    if stride <= 16:
        return 2
    return 3


def _downstream_of_upsample(g: "Graph") -> set[int]:
    out: set[int] = set()
    for n in g.nodes:
        if n.kind == "upsample" or any(i in out for i in n.inputs):
            out.add(n.id)
    return out


def assign_groups_map(g: "Graph") -> dict[int, int]:
    neckish = _downstream_of_upsample(g)
    feeders = {n.inputs[0] for n in g.nodes if n.kind == "detect_head"}
    group_of: dict[int, int] = {}
    for n in g.nodes:
        part = n.get("part")
        if "group" in n.attrs:
            grp = int(n.get("group"))
        elif n.kind in ("bn", "act") and part is None:
            grp = group_of[n.inputs[0]]
        elif part is not None:
            if part not in PARTS:
                raise g._err(f"part must be one of {PARTS}, got '{part}'", n.id)
            if part == "backbone":
                stride = g.stride.get(n.id)
                if stride is None:
                    raise g._err("cannot determine feature-map scale", n.id)
                grp = backbone_group(stride)
            else:
                grp = 4 if part == "neck" else 5
        elif n.kind == "detect_head" or n.id in feeders:
            grp = 5
        elif n.id in neckish:
            grp = 4
        else:
            stride = g.stride.get(n.id)
            if stride is None:
                raise g._err("cannot determine feature-map scale", n.id)
            grp = backbone_group(stride)
        grp = min(grp, g.n_groups)
        if grp < 1:
            raise g._err(f"group index must be >= 1, got {grp}", n.id)
        group_of[n.id] = grp
    return group_of


def assign_groups(g: "Graph", n_groups: int | None = None) -> "Graph":
    """Return ``g`` re-partitioned into ``n_groups`` groups (default: keep)."""
    from .graph import Graph

    if n_groups is None or n_groups == g.n_groups:
        return g
    if n_groups < 1:
        raise GraphError("need at least one group")
    return Graph(g.nodes, n_groups=n_groups, require_heads=len(g.heads) == 3)


def group_members(g: "Graph") -> dict[int, list[int]]:
    """Prunable conv ids per group index ``1..G`` (empty groups included)."""
    out: dict[int, list[int]] = {i: [] for i in range(1, g.n_groups + 1)}
    for cid in g.prunable_convs:
        out[g.group_of[cid]].append(cid)
    return out


def layer_group_ranges(g: "Graph") -> dict[int, tuple[int, int]]:
    """Min/max ``layer`` tag per group, over nodes that belong to a layer."""
    ranges: dict[int, tuple[int, int]] = {}
    for layer, ids in g.layers.items():
        for grp in {g.group_of[i] for i in ids}:
            lo, hi = ranges.get(grp, (layer, layer))
            ranges[grp] = (min(lo, layer), max(hi, layer))
    return dict(sorted(ranges.items()))
