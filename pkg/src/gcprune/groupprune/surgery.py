"""Remove masked channels from a graph and its weights; check the result numerically."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..engine import Network, no_grad
from ..netgraph import Graph, check_weights
from .masks import MaskSet

PASS_KINDS = ("bn", "act", "upsample", "maxpool", "detect_head")


class SurgeryError(AssertionError):
    """Mask propagation produced an inconsistent graph (a bug, never user error)."""


def propagate_keep(g: Graph, masks: Mapping[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Retained output-channel indices for every node."""
    keep: dict[int, np.ndarray] = {}
    for n in g.nodes:
        if n.kind == "conv":
            m = masks.get(n.id)
            keep[n.id] = np.arange(g.channels[n.id]) if m is None or n.id in g.head_convs else np.flatnonzero(m)
        elif n.kind in PASS_KINDS:
            keep[n.id] = keep[n.inputs[0]]
        elif n.kind == "add":
            a, b = (keep[i] for i in n.inputs)
            if not np.array_equal(a, b):
                raise SurgeryError(f"add {n.id} joins differently pruned inputs {n.inputs}")
            keep[n.id] = a
        elif n.kind == "concat":
            parts, off = [], 0
            for i in n.inputs:
                parts.append(keep[i] + off)
                off += g.channels[i]
            keep[n.id] = np.concatenate(parts)
    return keep


def apply_surgery(g: Graph, weights: Mapping[int, Mapping[str, np.ndarray]],
                  masks: MaskSet) -> tuple[Graph, dict[int, dict[str, np.ndarray]]]:
    """Slice conv filters, BN vectors and consumer input channels; node ids are preserved."""
    keep = propagate_keep(g, masks)
    nodes, out = [], {}
    for n in g.nodes:
        if n.kind == "conv":
            ko = keep[n.id]
            w = np.asarray(weights[n.id]["weight"])
            if n.inputs:
                w = w[:, keep[n.inputs[0]]]
            entry = {"weight": np.ascontiguousarray(w[ko])}
            if "bias" in weights[n.id]:
                entry["bias"] = np.ascontiguousarray(np.asarray(weights[n.id]["bias"])[ko])
            out[n.id] = entry
            nodes.append(n.with_attrs(out=int(len(ko))))
        elif n.kind == "bn":
            ko = keep[n.id]
            out[n.id] = {k: np.ascontiguousarray(np.asarray(v)[ko]) for k, v in weights[n.id].items()}
            nodes.append(n)
        else:
            nodes.append(n)
    try:
        pruned = g.replace_nodes(nodes)
        check_weights(pruned, out)
    except ValueError as exc:
        raise SurgeryError(f"pruned graph failed validation: {exc}") from exc
    return pruned, out


def masked_weights(g: Graph, weights: Mapping[int, Mapping[str, np.ndarray]],
                   masks: Mapping[int, np.ndarray]) -> dict[int, dict[str, np.ndarray]]:
    """Copy of ``weights`` with BN gamma and beta zeroed on pruned channels."""
    out = {nid: {k: np.array(v) for k, v in entry.items()} for nid, entry in weights.items()}
    for c, m in masks.items():
        bn = g.bn_of(c)
        if bn is None:
            continue
        off = ~np.asarray(m, dtype=bool)
        out[bn]["gamma"][off] = 0
        out[bn]["beta"][off] = 0
    return out


def verify_equivalence(original: Graph, original_weights, masks: Mapping[int, np.ndarray], pruned: Graph,
                       pruned_weights, probes: np.ndarray | Sequence[np.ndarray],
                       dtype=np.float64) -> float:
    """Max |pruned(x) - masked_original(x)| over heads and probes, in eval mode."""
    ref = Network(original, masked_weights(original, original_weights, masks), dtype=dtype)
    net = Network(pruned, pruned_weights, dtype=dtype)
    dev = 0.0
    with no_grad():
        for x in probes:
            x = np.asarray(x, dtype=dtype)
            if x.ndim == 3:
                x = x[None]
            ya, yb = ref(x), net(x)
            for a, b in zip(ya, yb):
                if a.shape != b.shape:
                    raise ValueError(f"output shape mismatch {a.shape} vs {b.shape}")
                dev = max(dev, float(np.max(np.abs(a.data - b.data))))
    return dev
