"""Graph data model: descriptors, pruning groups, residual coupling, cost model, weights."""
from .coupling import CoupledSet, coupled_lookup, coupled_sets
from .cost import CostReport, count_cost
from .graph import Graph, GraphError, NodeSpec, load_graph, parse_graph
from .groups import assign_groups, group_members, layer_group_ranges
from .weights import (ChecksumError, ShapeMismatchError, WeightsError, check_weights, init_weights,
                      load_weights, save_weights, weights_digest)

__all__ = [
    "ChecksumError", "CoupledSet", "CostReport", "Graph", "GraphError", "NodeSpec", "bundled_graph_path",
    "ShapeMismatchError", "WeightsError", "assign_groups", "check_weights", "count_cost",
    "coupled_lookup", "coupled_sets", "group_members", "init_weights", "layer_group_ranges",
    "load_graph", "load_weights", "parse_graph", "save_weights", "weights_digest",
]


def bundled_graph_path(name: str):
    """Path of a descriptor shipped in ``gcprune/data`` (e.g. ``tiny-det.graph``)."""
    from importlib.resources import files

    return files("gcprune") / "data" / name
