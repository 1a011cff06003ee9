"""Gamma histograms (CSV + SVG) and training-history CSV files."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .schedule import flatten_gammas

HIST_BINS = 64


def _collect(source) -> np.ndarray:
    """Gammas from a per-conv dict, a flat vector, or a weight store with ``gamma`` entries."""
    if isinstance(source, dict) and source and isinstance(next(iter(source.values())), dict):
        vals = [np.asarray(v["gamma"], np.float64).reshape(-1) for _, v in sorted(source.items())
                if "gamma" in v]
        return np.concatenate(vals) if vals else np.zeros(0)
    return flatten_gammas(source)[0]


def gamma_histogram(source, bins: int = HIST_BINS) -> tuple[np.ndarray, np.ndarray]:
    """``(edges, counts)`` over ``[min, max]`` of all gammas."""
    g = _collect(source)
    if not len(g):
        raise ValueError("no gamma values")
    counts, edges = np.histogram(g, bins=bins, range=(float(g.min()), float(g.max())))
    return edges, counts


def export_gamma_histogram(source, path, svg_path=None, bins: int = HIST_BINS) -> tuple[Path, Path]:
    """Write ``bin_lo,bin_hi,count`` rows and a bar-chart SVG next to it."""
    edges, counts = gamma_histogram(source, bins)
    path = Path(path)
    svg_path = Path(svg_path) if svg_path else path.with_suffix(".svg")
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    svg_path.write_text(histogram_svg(edges, counts))
    return path, svg_path


def read_histogram_csv(path) -> list[tuple[float, float, int]]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(line for line in f if not line.startswith("#")))
    return [(float(r["bin_lo"]), float(r["bin_hi"]), int(r["count"])) for r in rows]


def histogram_svg(edges: np.ndarray, counts: np.ndarray, width: int = 640, height: int = 240) -> str:
    pad = 30
    top = max(int(counts.max()), 1)
    bw = (width - 2 * pad) / len(counts)
    bars = []
    for i, c in enumerate(counts):
        h = (height - 2 * pad) * c / top
        bars.append(f'<rect x="{pad + i * bw:.2f}" y="{height - pad - h:.2f}" '
                    f'width="{bw * 0.9:.2f}" height="{h:.2f}" fill="#4a7ab5"/>')
    labels = (f'<text x="{pad}" y="{height - 8}" font-size="11">{edges[0]:.4g}</text>'
              f'<text x="{width - pad}" y="{height - 8}" font-size="11" text-anchor="end">'
              f'{edges[-1]:.4g}</text>'
              f'<text x="{pad}" y="{pad - 10}" font-size="11">max count {top}</text>')
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
            f'<rect width="100%" height="100%" fill="white"/>{"".join(bars)}{labels}</svg>\n')


def write_history_csv(epochs: Sequence[dict], path, columns: Sequence[str]) -> Path:
    """One row per epoch with the requested columns (missing values left empty)."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in epochs:
            w.writerow(["" if row.get(c) is None else
                        (repr(float(row[c])) if isinstance(row[c], (float, np.floating)) else row[c])
                        for c in columns])
    return path


SPARSE_HISTORY_COLUMNS = ("epoch", "loss", "penalty", "mean_abs_gamma")
