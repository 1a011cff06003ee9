"""Stage commands. Each writes its artifacts plus ``manifest.json`` under ``<out>/<stage>/``."""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from ..detectcore import Dataset, gen_dataset, load_dataset, save_dataset
from ..distill import HISTORY_COLUMNS, distill_train, finetune
from ..engine import Network
from ..groupprune import (REPORT_COLUMNS, apply_surgery, build_masks, finalize_masks, format_masks,
                          plan_thresholds, report_rows, verify_equivalence)
from ..netgraph import count_cost, init_weights, load_graph, load_weights, save_weights
from ..sparsetrain import (SPARSE_HISTORY_COLUMNS, gamma_histogram, histogram_svg, mean_abs_gamma,
                           train_sparse)
from ..training import evaluate, fit, hard_loss_fn, substream
from .config import PipelineConfig

log = logging.getLogger("gcprune.cli")

MANIFEST = "manifest.json"
STAGES = ("train", "sparse", "prune", "finetune", "distill")
EQUIVALENCE_PROBES = 4


class StageError(RuntimeError):
    """A stage was asked to run before the artifact it consumes exists."""


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def stamp(cfg: PipelineConfig) -> str:
    return f"config_hash={cfg.config_hash} seed={cfg.seed}"


class Stage:
    """Output directory of one stage and the manifest describing it."""

    def __init__(self, cfg: PipelineConfig, name: str):
        self.cfg = cfg
        self.name = name
        self.dir = cfg.out / name
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs: dict[str, str] = {}
        self.inputs: dict[str, str] = {}

    def path(self, fname: str) -> Path:
        return self.dir / fname

    def text(self, fname: str, body: str, comment: str = "#") -> Path:
        """Write a text artifact whose first line carries the config hash."""
        p = self.path(fname)
        head = f"<!-- {stamp(self.cfg)} -->" if comment == "<!--" else f"{comment} {stamp(self.cfg)}"
        p.write_text(head + "\n" + body)
        self.outputs[fname] = sha256(p)
        return p

    def csv(self, fname: str, columns, rows) -> Path:
        lines = [",".join(columns)]
        for r in rows:
            lines.append(",".join(_cell(r.get(c)) for c in columns))
        return self.text(fname, "\n".join(lines) + "\n")

    def weights(self, fname: str, graph, weights) -> Path:
        p = self.path(fname)
        save_weights(graph, weights, p)
        self.outputs[fname] = sha256(p)
        return p

    def consume(self, label: str, path: Path) -> None:
        self.inputs[label] = sha256(path)

    def finish(self, metrics: dict) -> Path:
        doc = {"stage": self.name, "config_hash": self.cfg.config_hash, "seed": self.cfg.seed,
               "overrides": self.cfg.overrides, "inputs": self.inputs, "outputs": self.outputs,
               "metrics": _plain(metrics)}
        p = self.path(MANIFEST)
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        log.info("%s: wrote %s", self.name, ", ".join(sorted(self.outputs)))
        return p


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def _require(path: Path, what: str, hint: str) -> Path:
    if not path.exists():
        raise StageError(f"missing {what}: {path} ({hint})")
    return path


# shared inputs
def datasets(cfg: PipelineConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset is not None:
        tr = load_dataset(cfg.dataset / "train")
        va = load_dataset(cfg.dataset / "val")
    else:
        d = cfg.data
        tr = gen_dataset(d.train_seed, d.n_train, cfg.input_hw, d.n_classes)
        va = gen_dataset(d.val_seed, d.n_val, cfg.input_hw, d.n_classes)
    if tr.image_hw != cfg.input_hw:
        raise StageError(f"dataset images are {tr.image_hw}, pipeline input is {cfg.input_hw}")
    return tr, va.with_anchors(tr.anchors)


def original_weights(cfg: PipelineConfig) -> Path:
    if cfg.weights is not None:
        return cfg.weights
    return _require(cfg.out / "train" / "weights.wts", "trained original weights",
                    "run `gcprune train` or set pipeline.weights")


def pruned_model(cfg: PipelineConfig) -> tuple[Path, Path]:
    hint = "run `gcprune prune` first"
    return (_require(cfg.out / "prune" / "pruned.graph", "pruned graph", hint),
            _require(cfg.out / "prune" / "pruned.wts", "pruned weights", hint))


def sparse_weights(cfg: PipelineConfig) -> Path:
    if cfg.prune.weights is not None:
        return cfg.prune.weights
    return _require(cfg.out / "sparse" / "weights.wts", "sparse-trained weights",
                    "run `gcprune sparse` or set prune.weights")


def _gammas(g, weights) -> dict[int, np.ndarray]:
    return {c: weights[g.bn_of(c)]["gamma"] for c in g.prunable_convs}


def _history_rows(epochs, columns):
    return [{c: e.get(c) for c in columns} for e in epochs]


# commands
def cmd_data(cfg: PipelineConfig) -> dict:
    st = Stage(cfg, "data")
    tr, va = datasets(cfg)
    for name, ds in (("train", tr), ("val", va)):
        m = save_dataset(ds, st.dir / name)
        st.outputs[f"{name}/{m.name}"] = sha256(m)
    st.finish({"n_train": len(tr), "n_val": len(va)})
    return {"n_train": len(tr), "n_val": len(va)}


def cmd_train(cfg: PipelineConfig) -> dict:
    st = Stage(cfg, "train")
    g = load_graph(cfg.graph)
    tr, va = datasets(cfg)
    net = Network(g, init_weights(g, substream(cfg.seed, "init")))
    hist = fit(net, tr, cfg.train, substream(cfg.seed, "train.data"), hard_loss_fn(tr.anchors, cfg.train.loss))
    metrics = evaluate(net, va, weights=cfg.train.loss)
    metrics["mean_abs_gamma"] = mean_abs_gamma(_gammas(g, net.state()))
    st.consume("graph", cfg.graph)
    st.weights("weights.wts", g, net.state())
    cols = ("epoch", "loss", "obj", "box", "cls")
    st.csv("history.csv", cols, _history_rows(hist.epochs, cols))
    st.finish(metrics)
    return metrics


def _write_hist(st: Stage, stem: str, gammas) -> None:
    edges, counts = gamma_histogram(gammas)
    rows = [{"bin_lo": lo, "bin_hi": hi, "count": int(c)} for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
    st.csv(f"{stem}.csv", ("bin_lo", "bin_hi", "count"), rows)
    st.text(f"{stem}.svg", histogram_svg(edges, counts), comment="<!--")


def cmd_sparse(cfg: PipelineConfig) -> dict:
    src = original_weights(cfg)
    st = Stage(cfg, "sparse")
    g = load_graph(cfg.graph)
    w = load_weights(g, src)
    tr, va = datasets(cfg)
    st.consume("weights", src)
    before = evaluate(Network(g, w), va, weights=cfg.sparse.train.loss)
    res = train_sparse(g, w, tr, cfg.sparse.schedule, cfg.sparse.train, substream(cfg.seed, "sparse.data"),
                       select_rng=substream(cfg.seed, "sparse.select"), val=va,
                       eval_every=cfg.sparse.eval_every)
    final = res.history.epochs[-1]
    metrics = {"mean_abs_gamma_before": mean_abs_gamma(_gammas(g, w)),
               "mean_abs_gamma": final["mean_abs_gamma"], "val_loss_before": before["val_loss"],
               "mAP_before": before["mAP"], "val_loss": final["val_loss"], "mAP": final["mAP"],
               "switch_epoch": res.scheduler.switched_at}
    st.weights("weights.wts", g, res.weights)
    cols = SPARSE_HISTORY_COLUMNS + ("val_loss", "mAP")
    st.csv("history.csv", cols, _history_rows(res.history.epochs, cols))
    _write_hist(st, "gamma_hist_before", _gammas(g, w))
    _write_hist(st, "gamma_hist", _gammas(g, res.weights))
    st.finish(metrics)
    return metrics


def cmd_prune(cfg: PipelineConfig) -> dict:
    src = sparse_weights(cfg)
    st = Stage(cfg, "prune")
    g = load_graph(cfg.graph)
    w = load_weights(g, src)
    st.consume("weights", src)
    gam = _gammas(g, w)
    plan = plan_thresholds(g, gam, cfg.prune.P, cfg.prune.mode, cfg.prune.explicit_ratios)
    pre = build_masks(g, gam, plan)
    masks = finalize_masks(g, pre, gam)
    pg, pw = apply_surgery(g, w, masks)
    probes = substream(cfg.seed, "prune.probes").random((EQUIVALENCE_PROBES, 3) + cfg.input_hw)
    dev = verify_equivalence(g, w, masks, pg, pw, probes)
    _, va = datasets(cfg)
    after = evaluate(Network(pg, pw), va)
    base_cost, pruned_cost = count_cost(g, cfg.input_hw), count_cost(pg, cfg.input_hw)
    st.text("pruned.graph", pg.to_text())
    st.weights("pruned.wts", pg, pw)
    st.text("masks.mask", format_masks(masks, plan))
    st.csv("prune_report.csv", REPORT_COLUMNS, report_rows(plan, masks))
    cost_rows = [{"model": name, "params": c.params, "flops": c.flops, "size_bytes": c.model_size_bytes}
                 for name, c in (("original", base_cost), ("pruned", pruned_cost))]
    st.csv("cost.csv", ("model", "params", "flops", "size_bytes"), cost_rows)
    metrics = {"P": plan.P, "mode": plan.mode, "N_total": plan.n_total, "quota_total": plan.total_quota,
               "pruned_pre_vote": int(pre.n_pruned()), "pruned": int(masks.n_pruned()),
               "max_deviation": dev, "val_loss": after["val_loss"], "mAP": after["mAP"]}
    st.finish(metrics)
    return metrics


def _student(cfg: PipelineConfig, st: Stage):
    gp, wp = pruned_model(cfg)
    pg = load_graph(gp)
    pw = load_weights(pg, wp)
    st.consume("pruned.graph", gp)
    st.consume("pruned.wts", wp)
    return pg, pw


def _student_rng(cfg: PipelineConfig):
    seed = cfg.seed if cfg.distill.student_seed is None else cfg.distill.student_seed
    return substream(seed, "student.data")


def _retrain_outputs(st: Stage, graph, res, va) -> dict:
    final = res.history.epochs[-1]
    metrics = {k: final[k] for k in ("L_hard", "L_soft_cls", "L_soft_box", "L_AT")}
    metrics.update({k: final[k] for k in final if k == "val_loss" or k.startswith("AP_") or k == "mAP"})
    st.weights("weights.wts", graph, res.weights)
    st.csv("history.csv", HISTORY_COLUMNS, _history_rows(res.history.epochs, HISTORY_COLUMNS))
    return metrics


def cmd_finetune(cfg: PipelineConfig) -> dict:
    st = Stage(cfg, "finetune")
    pg, pw = _student(cfg, st)
    tr, va = datasets(cfg)
    res = finetune(pg, pw, tr, cfg.distill.train, _student_rng(cfg), val=va,
                   eval_every=cfg.distill.eval_every)
    metrics = _retrain_outputs(st, pg, res, va)
    st.finish(metrics)
    return metrics


def cmd_distill(cfg: PipelineConfig) -> dict:
    t_path = original_weights(cfg) if cfg.distill.teacher == "original" else _require(
        cfg.out / "sparse" / "weights.wts", "sparse-trained teacher weights", "run `gcprune sparse` first")
    pg_path, pw_path = pruned_model(cfg)
    st = Stage(cfg, "distill")
    g = load_graph(cfg.graph)
    tw = load_weights(g, t_path)
    st.consume("teacher", t_path)
    pg, pw = _student(cfg, st)
    tr, va = datasets(cfg)
    res = distill_train(g, tw, pg, pw, tr, cfg.distill.cfg, cfg.distill.train,
                        _student_rng(cfg), val=va, eval_every=cfg.distill.eval_every)
    if res.teacher_digest_before != res.teacher_digest_after:
        raise StageError("teacher weights changed during distillation")
    metrics = _retrain_outputs(st, pg, res, va)
    metrics["teacher"] = cfg.distill.teacher
    st.finish(metrics)
    return metrics


def _target(cfg: PipelineConfig, stage: str | None):
    """(graph, weights) paths of ``stage``, or of the latest stage present."""
    layout = {"train": ("", "train/weights.wts"), "sparse": ("", "sparse/weights.wts"),
              "prune": ("prune/pruned.graph", "prune/pruned.wts"),
              "finetune": ("prune/pruned.graph", "finetune/weights.wts"),
              "distill": ("prune/pruned.graph", "distill/weights.wts")}
    if stage is None:
        present = [s for s in STAGES if (cfg.out / layout[s][1]).exists()]
        if not present:
            if cfg.weights is None:
                raise StageError(f"no weights to use: nothing under {cfg.out} and pipeline.weights unset")
            return cfg.graph, cfg.weights, "pipeline"
        stage = present[-1]
    gpath, wpath = layout[stage]
    graph = cfg.out / gpath if gpath else cfg.graph
    return (_require(graph, f"{stage} graph", f"run `gcprune {stage}` first"),
            _require(cfg.out / wpath, f"{stage} weights", f"run `gcprune {stage}` first"), stage)


def cmd_eval(cfg: PipelineConfig, stage: str | None = None) -> dict:
    gpath, wpath, name = _target(cfg, stage)
    g = load_graph(gpath)
    w = load_weights(g, wpath)
    _, va = datasets(cfg)
    metrics = {"target": name, **evaluate(Network(g, w), va)}
    st = Stage(cfg, f"eval-{name}")
    st.consume("graph", gpath)
    st.consume("weights", wpath)
    st.finish(metrics)
    return metrics


def cmd_hist(cfg: PipelineConfig, stage: str | None = None) -> dict:
    gpath, wpath, name = _target(cfg, stage)
    g = load_graph(gpath)
    gam = _gammas(g, load_weights(g, wpath))
    st = Stage(cfg, f"hist-{name}")
    st.consume("weights", wpath)
    _write_hist(st, "gamma_hist", gam)
    metrics = {"target": name, "mean_abs_gamma": mean_abs_gamma(gam)}
    st.finish(metrics)
    return metrics


def cmd_cost(graph_path, input_hw=(416, 416)) -> str:
    """Human-readable cost report; needs no pipeline config."""
    g = load_graph(graph_path)
    rep = count_cost(g, input_hw)
    lines = [f"graph {Path(graph_path).name} input {input_hw[0]}x{input_hw[1]}",
             rep.with_header().rstrip(), "", "group  prunable_channels  params  flops"]
    prunable = set(g.prunable_convs)
    for grp in range(1, g.n_groups + 1):
        nodes = [n.id for n in g.nodes if g.group_of[n.id] == grp]
        c = count_cost(g, input_hw, nodes=nodes)
        chans = sum(g.channels[n] for n in nodes if n in prunable)
        lines.append(f"{grp:>5}  {chans:>17}  {c.params:>6}  {c.flops}")
    return "\n".join(lines) + "\n"


def cmd_pipeline(cfg: PipelineConfig) -> dict:
    """Every stage in order, then the consolidated report."""
    from .report import cmd_report

    out = {}
    if cfg.weights is None:
        out["train"] = cmd_train(cfg)
    for name, fn in (("sparse", cmd_sparse), ("prune", cmd_prune), ("finetune", cmd_finetune),
                     ("distill", cmd_distill)):
        out[name] = fn(cfg)
    cmd_report(cfg.out)
    return out
