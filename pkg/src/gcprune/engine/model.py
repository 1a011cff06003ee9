"""Runs a :class:`~gcprune.netgraph.Graph` with autodiff-tracked parameters."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..netgraph.graph import Graph, NodeSpec
from . import functional as F
from .tensor import Tensor


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor | None = None


def layer_forward(node: NodeSpec, inputs: Sequence[Tensor], params=None,
                  training: bool = False) -> Tensor:
    """Apply one graph node to its input tensors."""
    kind = node.kind
    if kind == "conv":
        return F.conv2d(inputs[0], params.weight, node.get("s", 1), params.bias)
    if kind == "bn":
        return F.batchnorm(inputs[0], params, training)
    if kind == "act":
        fn = node.get("fn")
        return F.mish(inputs[0]) if fn == "mish" else F.leaky_relu(inputs[0])
    if kind == "add":
        return F.add(inputs[0], inputs[1])
    if kind == "concat":
        return inputs[0] if len(inputs) == 1 else F.concat(inputs, axis=1)
    if kind == "upsample":
        return F.upsample_nearest(inputs[0], node.get("factor", 2))
    if kind == "maxpool":
        return F.maxpool2d(inputs[0], node.get("k", 2), node.get("s", 1))
    if kind == "detect_head":
        return inputs[0]
    raise ValueError(f"unknown node kind {kind}")


@dataclass
class ForwardResult:
    heads: list[Tensor]
    features: dict[int, Tensor] = field(default_factory=dict)


class Network:
    """Graph + parameters. Parameter tensors are owned by the instance."""

    def __init__(self, graph: Graph, weights: Mapping[int, Mapping[str, np.ndarray]],
                 dtype=np.float32, bn_eps: float = 1e-5):
        self.graph = graph
        self.dtype = np.dtype(dtype)
        self.conv: dict[int, ConvParams] = {}
        self.bn: dict[int, F.BNParams] = {}
        for n in graph.nodes:
            if n.kind == "conv":
                w = weights[n.id]
                bias = w.get("bias")
                self.conv[n.id] = ConvParams(
                    Tensor(np.array(w["weight"], dtype=self.dtype), requires_grad=True),
                    None if bias is None else Tensor(np.array(bias, dtype=self.dtype), requires_grad=True))
            elif n.kind == "bn":
                w = weights[n.id]
                self.bn[n.id] = F.BNParams(
                    Tensor(np.array(w["gamma"], dtype=self.dtype), requires_grad=True),
                    Tensor(np.array(w["beta"], dtype=self.dtype), requires_grad=True),
                    np.array(w["running_mean"], dtype=self.dtype),
                    np.array(w["running_var"], dtype=self.dtype), eps=bn_eps)
        self._last_use: dict[int, int] = {}
        for n in graph.nodes:
            for i in n.inputs:
                self._last_use[i] = n.id

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for nid in sorted(set(self.conv) | set(self.bn)):
            if nid in self.conv:
                p = self.conv[nid]
                out.append(p.weight)
                if p.bias is not None:
                    out.append(p.bias)
            else:
                out += [self.bn[nid].gamma, self.bn[nid].beta]
        return out

    def gamma_tensors(self) -> dict[int, Tensor]:
        """BN scale tensor per prunable conv id."""
        return {cid: self.bn[self.graph.bn_of(cid)].gamma for cid in self.graph.prunable_convs}

    def gammas(self) -> dict[int, np.ndarray]:
        return {cid: t.data.copy() for cid, t in self.gamma_tensors().items()}

    def forward(self, x, training: bool = False, taps: Iterable[int] = ()) -> ForwardResult:
        g = self.graph
        taps = set(taps)
        keep = taps | set(g.heads)
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        vals: dict[int, Tensor] = {}
        for n in g.nodes:
            ins = [vals[i] for i in n.inputs] if n.inputs else [x]
            params = self.conv.get(n.id) if n.kind == "conv" else self.bn.get(n.id)
            vals[n.id] = layer_forward(n, ins, params, training)
            for i in n.inputs:
                if self._last_use[i] == n.id and i not in keep:
                    del vals[i]
        return ForwardResult([vals[h] for h in g.heads], {t: vals[t] for t in taps})

    def __call__(self, x, training: bool = False):
        return self.forward(x, training).heads

    def state(self) -> dict[int, dict[str, np.ndarray]]:
        """Copy of all parameters and running statistics, keyed like a weight store."""
        out: dict[int, dict[str, np.ndarray]] = {}
        for nid, p in self.conv.items():
            out[nid] = {"weight": p.weight.data.copy()}
            if p.bias is not None:
                out[nid]["bias"] = p.bias.data.copy()
        for nid, p in self.bn.items():
            out[nid] = {"gamma": p.gamma.data.copy(), "beta": p.beta.data.copy(),
                        "running_mean": p.running_mean.copy(), "running_var": p.running_var.copy()}
        return dict(sorted(out.items()))
