"""Sparse training of BN scales with a per-channel rate schedule."""
from .export import (HIST_BINS, SPARSE_HISTORY_COLUMNS, export_gamma_histogram, gamma_histogram,
                     histogram_svg, read_histogram_csv, write_history_csv)
from .penalty import sparse_penalty
from .schedule import (ChannelRateMap, RateScheduler, SparseSchedule, flatten_gammas, schedule_rates,
                       select_decaying)
from .train import SparseResult, mean_abs_gamma, train_sparse

__all__ = [
    "HIST_BINS", "SPARSE_HISTORY_COLUMNS", "ChannelRateMap", "RateScheduler", "SparseResult",
    "SparseSchedule", "export_gamma_histogram", "flatten_gammas", "gamma_histogram", "histogram_svg",
    "mean_abs_gamma", "read_histogram_csv", "schedule_rates", "select_decaying", "sparse_penalty",
    "train_sparse", "write_history_csv",
]
