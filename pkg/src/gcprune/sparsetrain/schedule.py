"""Per-channel sparse rates that drop for a chosen subset of channels mid-training."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

SELECTIONS = ("largest", "smallest", "random")


@dataclass(frozen=True)
class SparseSchedule:
    """``s0`` for every channel, then ``s0 * decay_factor`` for a subset after the switch.

    ``s0 = 0`` is accepted and disables the penalty (plain training).
    """

    s0: float
    switch_fraction: float = 0.5
    keep_fraction: float = 0.7
    decay_factor: float = 0.01
    selection: str = "largest"

    def __post_init__(self):
        if not self.s0 >= 0:
            raise ValueError(f"s0 must be >= 0, got {self.s0}")
        if not 0 < self.switch_fraction < 1:
            raise ValueError("switch_fraction must lie in (0, 1)")
        if not 0 <= self.keep_fraction <= 1:
            raise ValueError("keep_fraction must lie in [0, 1]")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}")

    def switch_epoch(self, total_epochs: int) -> int:
        return int(round(self.switch_fraction * total_epochs))

    def n_decay(self, n_channels: int) -> int:
        return int(round((1.0 - self.keep_fraction) * n_channels))


@dataclass
class ChannelRateMap:
    """Flat per-channel rates; ``layout`` maps conv id -> slice when built from a dict."""

    rates: np.ndarray
    layout: dict[int, slice] | None = None

    def __len__(self) -> int:
        return len(self.rates)

    def for_conv(self, conv_id: int) -> np.ndarray:
        return self.rates[self.layout[conv_id]]


def flatten_gammas(gammas) -> tuple[np.ndarray, dict[int, slice] | None]:
    """Concatenate per-conv gamma vectors in conv-id order (or pass a flat vector through)."""
    if isinstance(gammas, Mapping):
        layout, parts, pos = {}, [], 0
        for cid in sorted(gammas):
            v = np.asarray(gammas[cid], dtype=np.float64).reshape(-1)
            layout[cid] = slice(pos, pos + len(v))
            parts.append(v)
            pos += len(v)
        return (np.concatenate(parts) if parts else np.zeros(0)), layout
    return np.asarray(gammas, dtype=np.float64).reshape(-1), None


def select_decaying(sched: SparseSchedule, gammas: np.ndarray,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Boolean mask of channels whose rate decays; chosen globally over all channels."""
    mag = np.abs(np.asarray(gammas, dtype=np.float64))
    k = sched.n_decay(len(mag))
    out = np.zeros(len(mag), dtype=bool)
    if k == 0:
        return out
    if sched.selection == "largest":
        idx = np.argsort(-mag, kind="stable")[:k]
    elif sched.selection == "smallest":
        idx = np.argsort(mag, kind="stable")[:k]
    else:
        if rng is None:
            raise ValueError("random selection needs an rng")
        idx = rng.choice(len(mag), size=k, replace=False)
    out[idx] = True
    return out


def schedule_rates(sched: SparseSchedule, epoch: int, total_epochs: int, gammas,
                   decaying: np.ndarray | None = None,
                   rng: np.random.Generator | None = None) -> ChannelRateMap:
    """Rates for ``epoch``.

    ``gammas`` are the values at the switch epoch; pass the frozen
    ``decaying`` mask from an earlier call to keep the selection fixed.
    """
    flat, layout = flatten_gammas(gammas)
    if len(flat) == 0:
        raise ValueError("no gamma channels")
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    rates = np.full(len(flat), float(sched.s0))
    if epoch >= sched.switch_epoch(total_epochs):
        if decaying is None:
            decaying = select_decaying(sched, flat, rng)
        rates[decaying] = sched.s0 * sched.decay_factor
    return ChannelRateMap(rates, layout)


class RateScheduler:
    """Applies :func:`schedule_rates` while freezing the decaying set at the switch epoch."""

    def __init__(self, sched: SparseSchedule, total_epochs: int, rng: np.random.Generator | None = None):
        self.sched = sched
        self.total_epochs = total_epochs
        self.rng = rng
        self.decaying: np.ndarray | None = None
        self.switched_at: int | None = None

    def rates(self, epoch: int, gammas) -> ChannelRateMap:
        flat, _ = flatten_gammas(gammas)
        if epoch >= self.sched.switch_epoch(self.total_epochs) and self.decaying is None:
            self.decaying = select_decaying(self.sched, flat, self.rng)
            self.switched_at = epoch
        return schedule_rates(self.sched, epoch, self.total_epochs, gammas, self.decaying)
