"""Training with the scheduled L1 penalty on BN scales."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..detectcore import Dataset
from ..engine import Network
from ..netgraph import Graph
from ..training import History, TrainConfig, evaluate, fit, hard_loss_fn
from .export import HIST_BINS, gamma_histogram
from .penalty import sparse_penalty
from .schedule import RateScheduler, SparseSchedule, flatten_gammas


@dataclass
class SparseResult:
    net: Network
    history: History
    scheduler: RateScheduler

    @property
    def weights(self):
        return self.net.state()


def mean_abs_gamma(gammas) -> float:
    flat, _ = flatten_gammas(gammas)
    return float(np.mean(np.abs(flat))) if len(flat) else 0.0


def train_sparse(g: Graph, weights: Mapping, data: Dataset, sched: SparseSchedule, cfg: TrainConfig,
                 rng: np.random.Generator, select_rng: np.random.Generator | None = None,
                 val: Dataset | None = None, eval_every: int = 0) -> SparseResult:
    """Detection loss plus ``sparse_penalty`` on every prunable conv's BN scale.

    The step loss logged is detection + penalty. Per epoch the history keeps
    the mean |gamma| and a 64-bin gamma histogram; validation metrics are
    added every ``eval_every`` epochs and after the last one when ``val``
    is given.
    """
    net = Network(g, weights)
    tensors = net.gamma_tensors()
    order = sorted(tensors)
    scheduler = RateScheduler(sched, cfg.epochs, select_rng)
    base = hard_loss_fn(data.anchors, cfg.loss)
    state: dict = {}

    def on_epoch(epoch):
        state["rates"] = scheduler.rates(epoch, {c: tensors[c].data for c in order})

    def loss_fn(net_, x, labels, epoch):
        loss, logs = base(net_, x, labels, epoch)
        flat, _ = flatten_gammas({c: tensors[c].data for c in order})
        pen, sub = sparse_penalty(flat, state["rates"])
        state["sub"] = sub
        logs["detection"] = logs["loss"]
        logs["penalty"] = pen
        logs["loss"] = logs["loss"] + pen
        return loss, logs

    def after_backward(epoch):
        layout = state["rates"].layout
        sub = state["sub"]
        for c in order:
            t = tensors[c]
            t.grad = t.grad + sub[layout[c]].astype(t.grad.dtype)
        return {}

    def end_epoch(epoch, summary):
        gam = {c: tensors[c].data for c in order}
        summary["mean_abs_gamma"] = mean_abs_gamma(gam)
        summary["histogram"] = gamma_histogram(gam, HIST_BINS)
        last = epoch == cfg.epochs - 1
        if val is not None and (last or (eval_every and (epoch + 1) % eval_every == 0)):
            summary.update(evaluate(net, val, weights=cfg.loss))

    hist = fit(net, data, cfg, rng, loss_fn, on_epoch, after_backward, end_epoch)
    return SparseResult(net, hist, scheduler)
