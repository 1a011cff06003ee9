"""Detector compression: sparse BN-scale training, group channel pruning, attention distillation.

Subpackages:

- ``engine``: numpy autodiff tensors, conv/BN/activation layers, SGD.
- ``netgraph``: text graph descriptors, pruning groups, residual coupling, cost model.
- ``sparsetrain``: per-channel sparsity-rate schedule and penalty on BN scales.
- ``groupprune``: per-group thresholds, public-mask voting, graph surgery.
- ``distill``: attention-map, soft-class and soft-box losses against a teacher.
- ``detectcore``: synthetic dataset, YOLO-style decoding, hard loss, mAP.
- ``cli``: stage commands and run reports.
"""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
