"""Static parameter / multiply-accumulate counts for a graph."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

from .graph import GraphError
from .weights import BYTES_PER_WEIGHT, header_bytes

if TYPE_CHECKING:
    from .graph import Graph

FLOPS_NOTE = "FLOPs are multiply-accumulates of conv layers (1 MAC = 1 FLOP)."


@dataclass
class CostReport:
    params: int
    flops: int
    model_size_bytes: int
    trainable_params: int = 0
    conv_params: int = 0
    bn_params: int = 0
    other_ops: dict[str, int] = field(default_factory=dict)
    per_node: dict[int, tuple[int, int]] = field(default_factory=dict)

    def with_header(self) -> str:
        return (f"params {self.params} ({self.params / 1e6:.2f}M)\n"
                f"flops {self.flops} ({self.flops / 1e9:.2f}G)\n"
                f"model_size_bytes {self.model_size_bytes} ({self.model_size_bytes / 1e6:.1f}MB)\n"
                f"# {FLOPS_NOTE}\n")


def count_cost(g: "Graph", input_hw: tuple[int, int] = (416, 416), weights=None,
               nodes: Iterable[int] | None = None) -> CostReport:
    """Count params and conv MACs; ``nodes`` restricts the count to a subset."""
    h, w = input_hw
    if h <= 0 or w <= 0 or h % 32 or w % 32:
        raise GraphError(f"input size {input_hw} must be positive multiples of 32")
    if weights is not None:
        from .weights import check_weights

        check_weights(g, weights)
    selected = set(range(len(g))) if nodes is None else set(nodes)
    conv_p = bn_p = bias_p = flops = 0
    other = {"bn": 0, "act": 0, "add": 0, "maxpool": 0}
    per_node: dict[int, tuple[int, int]] = {}
    shapes = {}
    for n in g.nodes:
        if n.id not in selected:
            continue
        ho, wo = g.spatial(n.id, input_hw)
        c = g.channels[n.id]
        if n.kind == "conv":
            k = n.get("k", 1)
            cin = g.conv_in_channels(n.id)
            p = k * k * cin * c
            mac = p * ho * wo
            b = c if n.get("bias", 0) else 0
            conv_p += p
            bias_p += b
            flops += mac
            per_node[n.id] = (p + b, mac)
            shapes[n.id] = _conv_shapes(g, n.id)
        elif n.kind == "bn":
            bn_p += 4 * c
            other["bn"] += c * ho * wo
            per_node[n.id] = (4 * c, 0)
            shapes[n.id] = {k: (c,) for k in ("gamma", "beta", "running_mean", "running_var")}
        elif n.kind == "act":
            other["act"] += c * ho * wo
        elif n.kind == "add":
            other["add"] += c * ho * wo
        elif n.kind == "maxpool":
            k = n.get("k", 2)
            other["maxpool"] += k * k * c * ho * wo
    params = conv_p + bias_p + bn_p
    bn_trainable = bn_p // 2
    return CostReport(
        params=params,
        flops=flops,
        model_size_bytes=params * BYTES_PER_WEIGHT + header_bytes(shapes),
        trainable_params=conv_p + bias_p + bn_trainable,
        conv_params=conv_p + bias_p,
        bn_params=bn_p,
        other_ops=other,
        per_node=per_node,
    )


def _conv_shapes(g: "Graph", nid: int) -> dict[str, tuple[int, ...]]:
    n = g[nid]
    k = n.get("k", 1)
    s = {"weight": (g.channels[nid], g.conv_in_channels(nid), k, k)}
    if n.get("bias", 0):
        s["bias"] = (g.channels[nid],)
    return s
