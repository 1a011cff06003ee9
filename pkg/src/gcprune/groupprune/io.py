"""``.mask`` files and the per-group prune report."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .masks import MaskSet
from .plan import PrunePlan

REPORT_COLUMNS = ("group", "N_i", "quota_i", "t_i", "pruned_count", "ratio")


def format_masks(masks: MaskSet, plan: PrunePlan | None = None) -> str:
    lines = []
    if plan is not None:
        lines.append(f"# P={plan.P!r} mode={plan.mode} N_total={plan.n_total} quota_total={plan.total_quota}")
        for i, gp in sorted(plan.groups.items()):
            lines.append(f"# group {i} N={gp.n_channels} quota={gp.quota} t={gp.threshold!r} "
                         f"pruned={masks.n_pruned([c for c in gp.convs if c in masks])}")
    for c in masks:
        lines.append(f"{c}: " + "".join("1" if b else "0" for b in masks[c]))
    return "\n".join(lines) + "\n"


def write_masks(path, masks: MaskSet, plan: PrunePlan | None = None) -> Path:
    path = Path(path)
    path.write_text(format_masks(masks, plan))
    return path


def read_masks(path) -> tuple[MaskSet, dict[str, str]]:
    """Masks plus the header fields of the first comment line."""
    masks = MaskSet()
    header: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if not header and "P=" in line:
                header = dict(tok.split("=", 1) for tok in line[1:].split() if "=" in tok)
            continue
        cid, _, bits = line.partition(":")
        bits = bits.strip()
        if set(bits) - {"0", "1"}:
            raise ValueError(f"bad mask line: {raw!r}")
        masks[int(cid)] = np.array([b == "1" for b in bits], dtype=bool)
    return masks, header


def report_rows(plan: PrunePlan, masks: MaskSet) -> list[dict]:
    rows = []
    for i, gp in sorted(plan.groups.items()):
        pruned = masks.n_pruned([c for c in gp.convs if c in masks])
        rows.append({"group": i, "N_i": gp.n_channels, "quota_i": gp.quota, "t_i": gp.threshold,
                     "pruned_count": pruned, "ratio": pruned / gp.n_channels if gp.n_channels else 0.0})
    return rows


def write_prune_report(path, plan: PrunePlan, masks: MaskSet) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in report_rows(plan, masks):
            w.writerow([r["group"], r["N_i"], r["quota_i"], repr(float(r["t_i"])), r["pruned_count"],
                        repr(float(r["ratio"]))])
    return path

