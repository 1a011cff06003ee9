"""Student training against a frozen teacher, and the plain fine-tuning baseline."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..detectcore import Dataset, decode_scale, hard_loss, match_candidates, positive_rows
from ..engine import Network, no_grad
from ..engine import functional as F
from ..engine.tensor import Tensor
from ..netgraph import Graph, weights_digest
from ..training import History, TrainConfig, evaluate, fit, hard_loss_fn
from .attention import attention_loss, attention_vectors
from .soft import soft_box_loss, soft_class_loss, total_distill_loss

PAPER_BETAS = (1000.0, 1000.0, 1000.0, 10000.0, 10000.0)
HISTORY_COLUMNS = ("epoch", "L_hard", "L_soft_cls", "L_soft_box", "L_AT", "mAP")


@dataclass(frozen=True)
class DistillConfig:
    betas: tuple[float, ...] = PAPER_BETAS
    T: float = 3.0
    iou_thresh: float = 0.5
    cls_weight: float = 1.0
    box_weight: float = 1.0
    match_mode: str = "gt"
    tap_nodes: tuple[int, ...] | None = None

    def __post_init__(self):
        if any(b < 0 for b in self.betas):
            raise ValueError("betas must be >= 0")
        if not self.T > 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.iou_thresh < 1:
            raise ValueError("iou_thresh must lie in (0, 1)")
        if self.tap_nodes is not None and len(self.tap_nodes) != len(self.betas):
            raise ValueError("need one tap node per beta")


def default_taps(g: Graph) -> tuple[int, ...]:
    """Per group, the deepest activation at that group's highest spatial resolution."""
    taps = []
    for grp in range(1, g.n_groups + 1):
        acts = [n.id for n in g.nodes if n.kind == "act" and g.group_of[n.id] == grp]
        if not acts:
            raise ValueError(f"group {grp} has no activation to tap")
        finest = min(g.stride[a] for a in acts)
        taps.append(max(a for a in acts if g.stride[a] == finest))
    return tuple(taps)


def check_taps(teacher: Graph, student: Graph, taps: Sequence[int], input_hw=(64, 64)) -> None:
    for t in taps:
        if teacher.spatial(t, input_hw) != student.spatial(t, input_hw):
            raise ValueError(f"tap {t}: teacher and student feature sizes differ")


def student_boxes_at(head: Tensor, anchors: np.ndarray, idx) -> Tensor:
    """Decoded ``[K, 4]`` (x, y, w, h) of the student at positions ``(b, a, i, j)``."""
    h, w = head.shape[2:]
    rows = positive_rows(head, len(anchors), idx)
    _, a, i, j = idx
    k = len(a)
    x = (rows[:, 0].sigmoid() + j.astype(head.dtype)) * (1.0 / w)
    y = (rows[:, 1].sigmoid() + i.astype(head.dtype)) * (1.0 / h)
    bw = rows[:, 2].exp() * anchors[a, 0].astype(head.dtype)
    bh = rows[:, 3].exp() * anchors[a, 1].astype(head.dtype)
    return F.concat([x.reshape(k, 1), y.reshape(k, 1), bw.reshape(k, 1), bh.reshape(k, 1)], axis=1)


def class_logits(head, n_anchors: int):
    """``[N, A*(5+C), H, W]`` -> ``[N, A, H, W, C]`` (array or tensor)."""
    n, ch, h, w = head.shape
    p = head.reshape(n, n_anchors, ch // n_anchors, h, w)
    return p[:, :, 5:].transpose(0, 1, 3, 4, 2)


@dataclass
class DistillResult:
    net: Network
    history: History
    teacher_digest_before: str = ""
    teacher_digest_after: str = ""

    @property
    def weights(self):
        return self.net.state()


def distill_loss_fn(teacher: Network, anchors: np.ndarray, cfg: DistillConfig, taps: Sequence[int],
                    loss_weights):
    use_at = any(b != 0 for b in cfg.betas)
    use_soft = cfg.cls_weight != 0 or cfg.box_weight != 0

    def fn(student, x, labels, epoch):
        res = student.forward(x, training=True, taps=taps if use_at else ())
        hard, _ = hard_loss(res.heads, labels, anchors, loss_weights)
        zero = Tensor(np.zeros((), dtype=hard.dtype))
        l_cls, l_box, l_at = zero, zero, zero
        if use_at or use_soft:
            with no_grad():
                tres = teacher.forward(x.astype(teacher.dtype), training=False, taps=taps if use_at else ())
        if use_soft:
            t_heads = [h.data for h in tres.heads]
            if cfg.cls_weight:
                l_cls = soft_class_loss([class_logits(t, anchors.shape[1]) for t in t_heads],
                                        [class_logits(s, anchors.shape[1]) for s in res.heads], cfg.T)
                l_cls = l_cls * cfg.cls_weight
            if cfg.box_weight:
                idx = match_candidates(t_heads, anchors, labels, cfg.iou_thresh, cfg.match_mode)
                tb, sb, ix = [], [], []
                for s, (t, sh) in enumerate(zip(t_heads, res.heads)):
                    if not len(idx[s][0]):
                        continue
                    tb.append(decode_scale(t, anchors[s]).boxes[idx[s]])
                    sb.append(student_boxes_at(sh, anchors[s], idx[s]))
                    ix.append((np.arange(len(idx[s][0])),))
                l_box = soft_box_loss(tb, sb, ix) * (cfg.box_weight / len(labels))
        if use_at:
            l_at = attention_loss([attention_vectors(tres.features[t]).data for t in taps],
                                  [attention_vectors(res.features[t]) for t in taps], cfg.betas)
        terms = [t for t in (l_cls, l_box, l_at) if t is not zero]
        total = hard
        if terms:
            total = total_distill_loss(hard, l_cls, l_box, l_at)
        logs = {"L_hard": hard.item(), "L_soft_cls": l_cls.item(), "L_soft_box": l_box.item(),
                "L_AT": l_at.item()}
        logs["loss"] = total.item()
        return total, logs

    return fn


def distill_train(teacher_graph: Graph, teacher_weights: Mapping, student_graph: Graph,
                  student_weights: Mapping, data: Dataset, cfg: DistillConfig, train_cfg: TrainConfig,
                  rng: np.random.Generator, val: Dataset | None = None,
                  eval_every: int = 0) -> DistillResult:
    """Train the student on hard + soft + attention losses; the teacher stays in eval mode."""
    taps = cfg.tap_nodes or default_taps(student_graph)
    if len(taps) != len(cfg.betas):
        raise ValueError(f"{len(taps)} taps for {len(cfg.betas)} betas")
    check_taps(teacher_graph, student_graph, taps, data.image_hw)
    before = weights_digest(teacher_weights)
    teacher = Network(teacher_graph, teacher_weights)
    student = Network(student_graph, student_weights)
    fn = distill_loss_fn(teacher, data.anchors, cfg, taps, train_cfg.loss)
    hist = fit(student, data, train_cfg, rng, fn, end_epoch=_evaluator(student, val, train_cfg, eval_every))
    return DistillResult(student, hist, before, weights_digest(teacher.state()))


def finetune(graph: Graph, weights: Mapping, data: Dataset, train_cfg: TrainConfig,
             rng: np.random.Generator, val: Dataset | None = None, eval_every: int = 0) -> DistillResult:
    """Hard-loss-only training; the baseline distillation is compared against."""
    net = Network(graph, weights)
    base = hard_loss_fn(data.anchors, train_cfg.loss)

    def fn(net_, x, labels, epoch):
        loss, logs = base(net_, x, labels, epoch)
        return loss, {"L_hard": logs["loss"], "L_soft_cls": 0.0, "L_soft_box": 0.0, "L_AT": 0.0,
                      "loss": logs["loss"]}

    hist = fit(net, data, train_cfg, rng, fn, end_epoch=_evaluator(net, val, train_cfg, eval_every))
    return DistillResult(net, hist)


def _evaluator(net: Network, val: Dataset | None, train_cfg: TrainConfig, every: int):
    def end_epoch(epoch, summary):
        last = epoch == train_cfg.epochs - 1
        if val is not None and (last or (every and (epoch + 1) % every == 0)):
            summary.update(evaluate(net, val, weights=train_cfg.loss))
    return end_epoch
