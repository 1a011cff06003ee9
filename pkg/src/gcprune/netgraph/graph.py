"""Network descriptors: parsing, validation and shape/stride inference.

A descriptor is line based text, one node per line::

    # comment
    0 conv out=32 k=3 s=1 cin=3 part=backbone layer=0 inputs=[]
    1 bn inputs=[0]
    2 act fn=mish inputs=[1]
    ...
    40 detect_head anchors=3 classes=20 inputs=[39]

Convs with ``inputs=[]`` read the network input and must declare ``cin``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

KINDS = ("conv", "bn", "act", "add", "concat", "upsample", "maxpool", "detect_head")
ACTIVATIONS = ("mish", "leaky")
HEAD_STRIDES = (8, 16, 32)

_LINE = re.compile(r"^(\d+)\s+(\w+)((?:\s+\w+=[^\s\[\]]+)*)\s+inputs=\[([^\]]*)\]\s*$")
_INT_ATTRS = {"out", "k", "s", "cin", "bias", "factor", "anchors", "classes", "group", "layer", "tap"}


class GraphError(ValueError):
    """Structural problem in a descriptor or graph."""

    def __init__(self, message: str, line: int | None = None, node: int | None = None):
        self.line = line
        self.node = node
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class NodeSpec:
    id: int
    kind: str
    attrs: Mapping[str, object] = field(default_factory=dict)
    inputs: tuple[int, ...] = ()

    def get(self, key: str, default=None):
        return self.attrs.get(key, default)

    @property
    def act(self) -> str | None:
        return self.attrs.get("fn") if self.kind == "act" else None

    def with_attrs(self, **updates) -> "NodeSpec":
        attrs = dict(self.attrs)
        attrs.update(updates)
        return NodeSpec(self.id, self.kind, attrs, self.inputs)

    def to_line(self) -> str:
        parts = [str(self.id), self.kind]
        parts += [f"{k}={v}" for k, v in self.attrs.items()]
        parts.append("inputs=[" + ",".join(str(i) for i in self.inputs) + "]")
        return " ".join(parts)


class Graph:
    """Validated, immutable node list with derived channel/stride/group data."""

    def __init__(self, nodes: Iterable[NodeSpec], n_groups: int = 5, require_heads: bool = True,
                 lines: Mapping[int, int] | None = None):
        self.nodes: tuple[NodeSpec, ...] = tuple(nodes)
        self.n_groups = n_groups
        self._lines = dict(lines or {})
        self._validate(require_heads)
        from .groups import assign_groups_map  # local import: groups depends on Graph
        self.group_of: dict[int, int] = assign_groups_map(self)
        from .coupling import coupled_sets

        self.coupled = coupled_sets(self)

    # lookups
    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, node_id: int) -> NodeSpec:
        return self.nodes[node_id]

    def _err(self, msg: str, node_id: int) -> GraphError:
        return GraphError(msg, line=self._lines.get(node_id), node=node_id)

    @cached_property
    def consumers(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for i in n.inputs:
                out[i].append(n.id)
        return out

    @property
    def heads(self) -> tuple[int, ...]:
        hs = [n.id for n in self.nodes if n.kind == "detect_head"]
        return tuple(sorted(hs, key=lambda i: self.stride[i]))

    @property
    def convs(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == "conv"]

    @cached_property
    def head_convs(self) -> frozenset[int]:
        """Convs feeding a detection head directly (never pruned, no BN)."""
        return frozenset(self.nodes[h].inputs[0] for h in self.heads)

    @property
    def prunable_convs(self) -> list[int]:
        return [i for i in self.convs if i not in self.head_convs]

    def bn_of(self, conv_id: int) -> int | None:
        for c in self.consumers[conv_id]:
            if self.nodes[c].kind == "bn":
                return c
        return None

    @cached_property
    def layers(self) -> dict[int, list[int]]:
        """Nodes grouped by their ``layer`` tag (absent tags use the node id)."""
        out: dict[int, list[int]] = {}
        for n in self.nodes:
            out.setdefault(int(n.get("layer", n.id)), []).append(n.id)
        return dict(sorted(out.items()))

    def source_channels(self) -> int:
        return int(next(n.get("cin") for n in self.nodes if n.kind == "conv" and not n.inputs))

    def spatial(self, node_id: int, input_hw: tuple[int, int]) -> tuple[int, int]:
        s = self.stride[node_id]
        return int(round(input_hw[0] / s)), int(round(input_hw[1] / s))

    # validation
    def _validate(self, require_heads: bool) -> None:
        if not self.nodes:
            raise GraphError("graph has no nodes", line=1)
        for pos, n in enumerate(self.nodes):
            if n.id != pos:
                raise self._err(f"node ids must be 0..N-1 in order, found {n.id} at position {pos}", n.id)
            if n.kind not in KINDS:
                raise self._err(f"unknown node kind '{n.kind}'", n.id)
            for i in n.inputs:
                if i >= n.id:
                    raise self._err(f"input {i} of node {n.id} is not earlier in the graph (cycle)", n.id)
                if i < 0:
                    raise self._err(f"dangling input id {i}", n.id)
        self.channels: dict[int, int] = {}
        self.stride: dict[int, float] = {}
        self._cin: dict[int, int] = {}
        for n in self.nodes:
            self._infer(n)
        feeders = self._head_feeders()
        for n in self.nodes:
            if n.kind == "conv" and n.id not in feeders:
                nxt = self.nodes[n.id + 1] if n.id + 1 < len(self.nodes) else None
                nxt2 = self.nodes[n.id + 2] if n.id + 2 < len(self.nodes) else None
                if (nxt is None or nxt.kind != "bn" or nxt.inputs != (n.id,)
                        or nxt2 is None or nxt2.kind != "act" or nxt2.inputs != (n.id + 1,)):
                    raise self._err(f"conv {n.id} must be followed by bn then act", n.id)
                if len(self.consumers[n.id]) != 1 or len(self.consumers[n.id + 1]) != 1:
                    raise self._err(f"conv {n.id} output may only feed its bn", n.id)
            if n.kind == "bn" and self.nodes[n.inputs[0]].kind != "conv":
                raise self._err("bn must follow a conv", n.id)
        if require_heads:
            hs = [n for n in self.nodes if n.kind == "detect_head"]
            if len(hs) != 3:
                raise GraphError(f"expected 3 detect_head nodes, found {len(hs)}",
                                 line=self._lines.get(hs[-1].id) if hs else len(self.nodes))
            strides = sorted(self.stride[h.id] for h in hs)
            if tuple(strides) != HEAD_STRIDES:
                raise self._err(f"detect heads must sit at strides 8/16/32, got {strides}", hs[0].id)

    def _head_feeders(self) -> set[int]:
        return {n.inputs[0] for n in self.nodes if n.kind == "detect_head" and n.inputs}

    def _infer(self, n: NodeSpec) -> None:
        ins = n.inputs
        arity = {"conv": (0, 1), "bn": (1, 1), "act": (1, 1), "upsample": (1, 1),
                 "maxpool": (1, 1), "detect_head": (1, 1), "add": (2, 2), "concat": (1, 64)}[n.kind]
        if not arity[0] <= len(ins) <= arity[1]:
            raise self._err(f"{n.kind} takes {arity[0]}..{arity[1]} inputs, got {len(ins)}", n.id)
        ch, st = self.channels, self.stride
        if n.kind == "conv":
            out, k, s = n.get("out"), n.get("k", 1), n.get("s", 1)
            if not isinstance(out, int) or out < 1:
                raise self._err("conv needs out=<positive int>", n.id)
            if s not in (1, 2) or k < 1 or k % 2 == 0:
                raise self._err(f"conv needs odd k and stride 1 or 2 (k={k}, s={s})", n.id)
            if ins:
                cin, base = ch[ins[0]], st[ins[0]]
            else:
                cin, base = n.get("cin"), 1.0
                if not isinstance(cin, int) or cin < 1:
                    raise self._err("input conv needs cin=<positive int>", n.id)
            ch[n.id], st[n.id] = out, base * s
            self._cin[n.id] = cin
        elif n.kind == "act":
            if n.get("fn") not in ACTIVATIONS:
                raise self._err(f"act needs fn in {ACTIVATIONS}", n.id)
            ch[n.id], st[n.id] = ch[ins[0]], st[ins[0]]
        elif n.kind in ("bn",):
            ch[n.id], st[n.id] = ch[ins[0]], st[ins[0]]
        elif n.kind == "maxpool":
            k, s = n.get("k", 2), n.get("s", 1)
            if k < 1 or s < 1:
                raise self._err("maxpool needs positive k and s", n.id)
            ch[n.id], st[n.id] = ch[ins[0]], st[ins[0]] * s
        elif n.kind == "upsample":
            f = n.get("factor", 2)
            ch[n.id], st[n.id] = ch[ins[0]], st[ins[0]] / f
        elif n.kind == "add":
            a, b = ins
            if ch[a] != ch[b]:
                raise self._err(f"add channel mismatch: {ch[a]} vs {ch[b]}", n.id)
            if st[a] != st[b]:
                raise self._err(f"add spatial mismatch (strides {st[a]} vs {st[b]})", n.id)
            ch[n.id], st[n.id] = ch[a], st[a]
        elif n.kind == "concat":
            ss = {st[i] for i in ins}
            if len(ss) != 1:
                raise self._err(f"concat spatial mismatch (strides {sorted(ss)})", n.id)
            ch[n.id], st[n.id] = sum(ch[i] for i in ins), st[ins[0]]
        elif n.kind == "detect_head":
            src = self.nodes[ins[0]]
            a, c = n.get("anchors", 3), n.get("classes")
            if src.kind != "conv":
                raise self._err("detect_head must read a conv", n.id)
            if not isinstance(c, int) or c < 1:
                raise self._err("detect_head needs classes=<positive int>", n.id)
            if ch[src.id] != a * (5 + c):
                raise self._err(f"head conv has {ch[src.id]} channels, expected {a}*(5+{c})", n.id)
            ch[n.id], st[n.id] = ch[ins[0]], st[ins[0]]

    def conv_in_channels(self, conv_id: int) -> int:
        return self._cin[conv_id]

    # parameter shapes
    def param_shapes(self) -> dict[int, dict[str, tuple[int, ...]]]:
        shapes: dict[int, dict[str, tuple[int, ...]]] = {}
        for n in self.nodes:
            if n.kind == "conv":
                k = n.get("k", 1)
                s = {"weight": (self.channels[n.id], self._cin[n.id], k, k)}
                if n.get("bias", 0):
                    s["bias"] = (self.channels[n.id],)
                shapes[n.id] = s
            elif n.kind == "bn":
                c = (self.channels[n.id],)
                shapes[n.id] = {"gamma": c, "beta": c, "running_mean": c, "running_var": c}
        return shapes

    @property
    def n_classes(self) -> int:
        return int(self.nodes[self.heads[0]].get("classes"))

    @property
    def n_anchors(self) -> int:
        return int(self.nodes[self.heads[0]].get("anchors", 3))

    def replace_nodes(self, nodes: Iterable[NodeSpec]) -> "Graph":
        return Graph(nodes, n_groups=self.n_groups, require_heads=bool(self.heads))

    def to_text(self, header: str | None = None) -> str:
        lines = []
        if header:
            lines += ["# " + h for h in header.splitlines()]
        lines += [n.to_line() for n in self.nodes]
        return "\n".join(lines) + "\n"


def _value(key: str, raw: str):
    if key in _INT_ATTRS:
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"attribute {key} must be an integer, got '{raw}'") from None
    return raw


def parse_graph(text: str, n_groups: int = 5, require_heads: bool = True) -> Graph:
    """Parse descriptor text into a validated :class:`Graph`."""
    nodes: list[NodeSpec] = []
    seen: set[int] = set()
    lines: dict[int, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise GraphError(f"cannot parse node line: {raw.strip()!r}", line=lineno)
        nid, kind, attr_txt, inp_txt = m.groups()
        attrs = {}
        for item in attr_txt.split():
            k, v = item.split("=", 1)
            try:
                attrs[k] = _value(k, v)
            except ValueError as exc:
                raise GraphError(str(exc), line=lineno) from None
        try:
            inputs = tuple(int(t) for t in inp_txt.replace(" ", "").split(",") if t)
        except ValueError:
            raise GraphError(f"bad inputs list [{inp_txt}]", line=lineno) from None
        if kind not in KINDS:
            raise GraphError(f"unknown node kind '{kind}'", line=lineno)
        node = NodeSpec(int(nid), kind, attrs, inputs)
        for i in inputs:
            if i >= node.id:
                raise GraphError(f"input {i} is not earlier than node {node.id} (cycle)", line=lineno)
            if i not in seen:
                raise GraphError(f"dangling input id {i}", line=lineno)
        lines[node.id] = lineno
        seen.add(node.id)
        nodes.append(node)
    if not nodes:
        raise GraphError("descriptor contains no nodes", line=1)
    return Graph(nodes, n_groups=n_groups, require_heads=require_heads, lines=lines)


def load_graph(path, n_groups: int = 5) -> Graph:
    from pathlib import Path

    return parse_graph(Path(path).read_text(), n_groups=n_groups)
