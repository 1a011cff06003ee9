"""Command-line pipeline: ``gcprune <stage> [--config FILE] [overrides]``.

Stages read their inputs from the previous stage's directory under
``--out`` and write artifacts plus a ``manifest.json`` with the config
hash and seed. ``GCPRUNE_LOG_LEVEL`` sets logging verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ..groupprune import PruneError
from ..netgraph import GraphError, WeightsError
from ..training import TrainingDiverged
from .config import (FLAG_KEYS, ConfigError, PipelineConfig, bundled_config_path, load_config,
                     parse_override)
from .report import ReportError, build_tables, cmd_report, load_manifests
from .stages import (STAGES, StageError, cmd_cost, cmd_data, cmd_distill, cmd_eval, cmd_finetune,
                     cmd_hist, cmd_pipeline, cmd_prune, cmd_sparse, cmd_train)

LOG_ENV = "GCPRUNE_LOG_LEVEL"

COMMANDS = {"data": cmd_data, "train": cmd_train, "sparse": cmd_sparse, "prune": cmd_prune,
            "finetune": cmd_finetune, "distill": cmd_distill, "pipeline": cmd_pipeline}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI pipeline config (defaults apply to missing keys)")
    p.add_argument("--graph", help="network descriptor (path or bundled name)")
    p.add_argument("--weights", help="trained original weights; skips the train stage")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory")
    p.add_argument("--input", help="input size, e.g. 64 or 64x64")
    p.add_argument("--total-prune-ratio", type=float, dest="total_prune_ratio")
    p.add_argument("--sparse-rate", type=float, dest="sparse_rate", help="initial sparsity rate s0")
    p.add_argument("--temperature", type=float)
    p.add_argument("--betas", help="attention gains, comma or space separated")
    p.add_argument("--iou-thresh", type=float, dest="iou_thresh")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gcprune", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {"data": "write the synthetic train/val datasets", "train": "train the original network",
             "sparse": "sparse training of BN scales", "prune": "group channel pruning and surgery",
             "finetune": "hard-loss retraining of the pruned network",
             "distill": "attention + soft-target distillation into the pruned network",
             "pipeline": "train, sparse, prune, finetune, distill, report"}
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text))
    for name, text in (("eval", "validation loss and mAP of a stage's weights"),
                       ("hist", "gamma histogram of a stage's weights")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--stage", choices=STAGES, help="defaults to the latest stage present")
    p = sub.add_parser("cost", help="params / FLOPs / size of a descriptor")
    p.add_argument("--graph", required=True)
    p.add_argument("--input", default="416")
    p.add_argument("--out", help="also write cost.txt here")
    p = sub.add_parser("report", help="consolidated report of a run directory")
    p.add_argument("run_dir")
    return ap


def _input_hw(text: str) -> tuple[int, int]:
    parts = [int(v) for v in text.lower().replace("x", " ").replace(",", " ").split()]
    if not parts:
        raise ConfigError(f"bad input size {text!r}")
    return parts[0], parts[-1]


def config_from_args(args) -> PipelineConfig:
    overrides = []
    for flag, (section, key) in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is None:
            continue
        if flag == "input":
            v = " ".join(str(x) for x in _input_hw(v))
        overrides.append((section, key, str(v)))
    overrides += [parse_override(s) for s in args.set]
    return load_config(args.config, overrides)


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "cost":
            from ..netgraph import bundled_graph_path

            graph = Path(args.graph)
            if not graph.exists():
                graph = Path(str(bundled_graph_path(args.graph)))
            if not graph.exists():
                raise ConfigError(f"graph not found: {args.graph}")
            text = cmd_cost(graph, _input_hw(args.input))
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / "cost.txt").write_text(text)
            sys.stdout.write(text)
            return 0
        if args.command == "report":
            path = cmd_report(args.run_dir)
            sys.stdout.write(path.read_text())
            return 0
        cfg = config_from_args(args)
        if args.command in ("eval", "hist"):
            fn = cmd_eval if args.command == "eval" else cmd_hist
            result = fn(cfg, args.stage)
        else:
            result = COMMANDS[args.command](cfg)
        sys.stdout.write(json.dumps(result, indent=2, sort_keys=True, default=float) + "\n")
        return 0
    except (ConfigError, StageError) as e:
        print(f"gcprune {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (PruneError, ReportError, GraphError, WeightsError, TrainingDiverged, ValueError) as e:
        print(f"gcprune {args.command}: error: {e}", file=sys.stderr)
        return 1


def main(argv=None) -> None:
    _setup_logging()
    sys.exit(run(argv))


__all__ = [
    "COMMANDS", "ConfigError", "PipelineConfig", "ReportError", "StageError", "build_parser",
    "build_tables", "bundled_config_path", "cmd_cost", "cmd_data", "cmd_distill", "cmd_eval",
    "cmd_finetune", "cmd_hist", "cmd_pipeline", "cmd_prune", "cmd_report", "cmd_sparse", "cmd_train",
    "config_from_args", "load_config", "load_manifests", "main", "run",
]
