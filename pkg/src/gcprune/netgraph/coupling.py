"""Convolutions whose output channels meet in residual additions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

from .graph import GraphError

if TYPE_CHECKING:
    from .graph import Graph

# node kinds that pass channels through one-to-one
PASS_THROUGH = ("bn", "act", "upsample", "maxpool")


@dataclass(frozen=True)
class CoupledSet:
    conv_ids: frozenset[int]

    def __len__(self) -> int:
        return len(self.conv_ids)

    def __iter__(self):
        return iter(sorted(self.conv_ids))

    def __contains__(self, cid) -> bool:
        return cid in self.conv_ids


class _DisjointSet:
    def __init__(self):
        self.parent: dict[int, int] = {}

    def find(self, x: int) -> int:
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def channel_source(g: "Graph", node_id: int, add_sources: dict[int, list[int]]) -> list[int]:
    """Convs that define the channel layout of ``node_id``'s output."""
    n = g[node_id]
    while n.kind in PASS_THROUGH or (n.kind == "concat" and len(n.inputs) == 1):
        n = g[n.inputs[0]]
    if n.kind == "conv":
        return [n.id]
    if n.kind == "add":
        return add_sources[n.id]
    raise GraphError(f"residual add fed through '{n.kind}' node {n.id} is not supported", node=n.id)


def coupled_sets(g: "Graph") -> list[CoupledSet]:
    """Union the source convs of every ``add``, processing adds in graph order."""
    ds = _DisjointSet()
    add_sources: dict[int, list[int]] = {}
    for n in g.nodes:
        if n.kind != "add":
            continue
        srcs: list[int] = []
        for i in n.inputs:
            srcs += channel_source(g, i, add_sources)
        for s in srcs[1:]:
            ds.union(srcs[0], s)
        add_sources[n.id] = srcs
    members: dict[int, set[int]] = {}
    for cid in {c for srcs in add_sources.values() for c in srcs}:
        members.setdefault(ds.find(cid), set()).add(cid)
    sets = [CoupledSet(frozenset(m)) for m in members.values()]
    for s in sets:
        widths = {g.channels[c] for c in s.conv_ids}
        if len(widths) != 1:
            raise GraphError(f"coupled convs {sorted(s.conv_ids)} have unequal widths {sorted(widths)}")
    return sorted(sets, key=lambda s: min(s.conv_ids))


def coupled_lookup(g: "Graph") -> dict[int, CoupledSet]:
    return {c: s for s in coupled_sets(g) for c in s.conv_ids}
