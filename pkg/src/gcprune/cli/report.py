"""Consolidated run report (markdown + long-form CSV) built from stage manifests and CSVs."""
from __future__ import annotations

import csv
import json
from pathlib import Path

from .stages import MANIFEST, sha256


class ReportError(RuntimeError):
    pass


SECTIONS = ("sparse", "ratios", "cost", "map")
TITLES = {"sparse": "Sparse training", "ratios": "Group pruning ratios",
          "cost": "Model cost before and after pruning", "map": "Fine-tuning vs. distillation"}


def load_manifests(run_dir) -> dict[str, dict]:
    """Stage name -> manifest; raises if config hashes differ or files were altered."""
    run_dir = Path(run_dir)
    out = {}
    for p in sorted(run_dir.glob(f"*/{MANIFEST}")):
        out[p.parent.name] = json.loads(p.read_text())
    hashes = {m["config_hash"] for m in out.values()}
    if len(hashes) > 1:
        detail = ", ".join(f"{s}={m['config_hash']}" for s, m in sorted(out.items()))
        raise ReportError(f"refusing to mix artifacts from different configs: {detail}")
    for stage, m in out.items():
        for fname, digest in m["outputs"].items():
            f = run_dir / stage / fname
            if not f.exists():
                raise ReportError(f"{stage}: listed artifact {fname} is missing")
            if sha256(f) != digest:
                raise ReportError(f"{stage}: {fname} does not match its manifest digest")
            if f.suffix in (".csv", ".mask", ".graph", ".svg"):
                first = f.read_text().split("\n", 1)[0]
                if f"config_hash={m['config_hash']}" not in first:
                    raise ReportError(f"{stage}: {fname} carries a different config hash")
    return out


def _csv(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(line for line in f if not line.startswith("#")))


def _num(v, fmt: str) -> str:
    return "absent" if v is None or v == "" else format(float(v), fmt)


def _last_map(run_dir: Path, stage: str, manifests) -> tuple:
    if stage not in manifests:
        return None, None
    rows = _csv(run_dir / stage / "history.csv")
    m = manifests[stage]["metrics"]
    return (rows[-1]["mAP"] if rows and rows[-1].get("mAP") else m.get("mAP")), m.get("val_loss")


def build_tables(run_dir) -> tuple[dict[str, tuple[list[str], list[list[str]]] | None], dict]:
    run_dir = Path(run_dir)
    man = load_manifests(run_dir)
    tables: dict[str, tuple[list[str], list[list[str]]] | None] = dict.fromkeys(SECTIONS)
    if "sparse" in man:
        m = man["sparse"]["metrics"]
        tables["sparse"] = (["quantity", "before", "after"], [
            ["mean abs gamma", _num(m["mean_abs_gamma_before"], ".4f"), _num(m["mean_abs_gamma"], ".4f")],
            ["val hard loss", _num(m["val_loss_before"], ".4f"), _num(m["val_loss"], ".4f")],
            ["mAP@0.5", _num(m["mAP_before"], ".4f"), _num(m["mAP"], ".4f")],
        ])
    if "prune" in man:
        rows = _csv(run_dir / "prune" / "prune_report.csv")
        body = [[r["group"], r["N_i"], r["quota_i"], r["pruned_count"], _num(r["ratio"], ".4f"),
                 _num(r["t_i"], ".4g")] for r in rows]
        n = sum(int(r["N_i"]) for r in rows)
        k = sum(int(r["pruned_count"]) for r in rows)
        q = sum(int(r["quota_i"]) for r in rows)
        body.append(["total", str(n), str(q), str(k), _num(k / n if n else 0.0, ".4f"), ""])
        tables["ratios"] = (["group", "channels", "quota", "pruned", "ratio", "threshold"], body)
        cost = {r["model"]: r for r in _csv(run_dir / "prune" / "cost.csv")}
        o, p = cost["original"], cost["pruned"]
        body = []
        for name, r in (("original", o), ("pruned", p)):
            body.append([name, r["params"], r["flops"], _num(int(r["size_bytes"]) / 1e6, ".3f")])
        body.append(["change %"] + [_num(100.0 * (int(p[c]) - int(o[c])) / int(o[c]), ".2f")
                                    for c in ("params", "flops", "size_bytes")])
        tables["cost"] = (["model", "params", "flops", "size (MB)"], body)
    if "finetune" in man or "distill" in man:
        body = []
        for label, stage in (("original", "train"), ("sparse", "sparse"), ("pruned", "prune"),
                             ("fine-tuned", "finetune"), ("distilled", "distill")):
            if stage in ("finetune", "distill"):
                mp, vl = _last_map(run_dir, stage, man)
            else:
                m = man.get(stage, {}).get("metrics", {})
                mp, vl = m.get("mAP"), m.get("val_loss")
            body.append([label, _num(mp, ".4f"), _num(vl, ".4f")])
        tables["map"] = (["model", "mAP@0.5", "val hard loss"], body)
    return tables, man


def _md_table(header, rows) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(r) + " |" for r in rows]
    return out


def cmd_report(run_dir) -> Path:
    """Write ``report.md`` and ``report.csv`` into ``run_dir``; absent stages are marked, not fatal."""
    run_dir = Path(run_dir)
    tables, man = build_tables(run_dir)
    if man:
        first = next(iter(man.values()))
        head = (f"config_hash {first['config_hash']}, seed {first['seed']}, "
                f"stages: {' '.join(s for s in man)}")
    else:
        head = f"no stage manifests under {run_dir}"
    lines = ["# Compression run report", "", head, ""]
    flat = []
    for key in SECTIONS:
        lines += [f"## {TITLES[key]}", ""]
        t = tables[key]
        if t is None:
            lines += ["absent", ""]
            continue
        header, rows = t
        lines += _md_table(header, rows) + [""]
        for r in rows:
            flat += [(key, r[0], c, v) for c, v in zip(header[1:], r[1:])]
    md = run_dir / "report.md"
    md.write_text("\n".join(lines))
    with open(run_dir / "report.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["section", "row", "column", "value"])
        w.writerows(flat)
    return md
