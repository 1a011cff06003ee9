"""Shared SGD training loop, evaluation helper and seeded RNG substreams."""
from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .detectcore import (Dataset, HardLossWeights, decode_predictions, eval_map, hard_loss,
                         iterate_batches)
from .engine import SGD, Network, Tensor, backward, cosine_lr, no_grad

log = logging.getLogger("gcprune.training")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named use of the master seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    lr0: float = 0.02
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 16
    flip: bool = True
    loss: HardLossWeights = HardLossWeights()

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")


@dataclass
class History:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def epoch_means(self, epoch: int, keys) -> dict[str, float]:
        rows = [s for s in self.steps if s["epoch"] == epoch]
        return {k: float(np.mean([r[k] for r in rows])) for k in keys}


# callbacks: loss_fn(net, x, labels, epoch) -> (loss Tensor, {name: float})
LossFn = Callable[[Network, np.ndarray, list, int], "tuple[Tensor, dict[str, float]]"]


def hard_loss_fn(anchors: np.ndarray, weights: HardLossWeights = HardLossWeights()) -> LossFn:
    def fn(net, x, labels, epoch):
        loss, parts = hard_loss(net(x, training=True), labels, anchors, weights)
        return loss, {"loss": loss.item(), **parts}
    return fn


def fit(net: Network, data: Dataset, cfg: TrainConfig, rng: np.random.Generator, loss_fn: LossFn,
        on_epoch: Callable[[int], None] | None = None,
        after_backward: Callable[[int], dict[str, float]] | None = None,
        end_epoch: Callable[[int, dict], None] | None = None) -> History:
    """Minibatch SGD with momentum and a per-epoch cosine learning rate.

    ``after_backward`` may add to parameter gradients before the update
    and returns extra values to log for the step.
    """
    hist = History()
    params = net.parameters()
    opt = SGD(params, cfg.momentum, cfg.weight_decay)
    for epoch in range(cfg.epochs):
        if on_epoch is not None:
            on_epoch(epoch)
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min)
        for x, labels in iterate_batches(data, cfg.batch_size, rng, cfg.flip):
            loss, logs = loss_fn(net, x, labels, epoch)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {len(hist.steps)}: {logs}")
            backward(loss)
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            if after_backward is not None:
                logs.update(after_backward(epoch))
            opt.step(lr)
            hist.steps.append({"epoch": epoch, "step": len(hist.steps), "lr": lr, **logs})
        summary = {"epoch": epoch, "lr": lr}
        rows = [s for s in hist.steps if s["epoch"] == epoch]
        for k in rows[0] if rows else ():
            if k not in ("epoch", "step", "lr"):
                summary[k] = float(np.mean([r[k] for r in rows]))
        if end_epoch is not None:
            end_epoch(epoch, summary)
        hist.epochs.append(summary)
        log.info("epoch %d/%d %s", epoch + 1, cfg.epochs,
                 " ".join(f"{k}={v:.4g}" for k, v in summary.items()
                          if k != "epoch" and isinstance(v, (int, float))))
    return hist


def predict(net: Network, data: Dataset, batch_size: int = 32) -> list[list[np.ndarray]]:
    """Eval-mode head outputs per batch."""
    out = []
    with no_grad():
        for x, _ in iterate_batches(data, batch_size, dtype=net.dtype):
            out.append([h.data for h in net(x, training=False)])
    return out


def evaluate(net: Network, data: Dataset, conf_thresh: float = 0.01, iou_thresh: float = 0.5,
             weights: HardLossWeights = HardLossWeights(), batch_size: int = 32) -> dict[str, float]:
    """Validation hard loss (batch-size weighted mean) and mAP@iou_thresh."""
    dets = []
    loss_sum = 0.0
    with no_grad():
        for x, labels in iterate_batches(data, batch_size, dtype=net.dtype):
            heads = net(x, training=False)
            loss, _ = hard_loss(heads, labels, data.anchors, weights)
            loss_sum += loss.item() * len(labels)
            dets += decode_predictions([h.data for h in heads], data.anchors, conf_thresh)
    res = eval_map(dets, data.labels, iou_thresh, data.n_classes)
    return {"val_loss": loss_sum / max(len(data), 1), "mAP": res.mAP,
            **{f"AP_{c}": v for c, v in res.ap.items()}}
