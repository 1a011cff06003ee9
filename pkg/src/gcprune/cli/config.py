"""Pipeline configuration: one INI document, per-stage sections, flag overrides."""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from ..detectcore import HardLossWeights
from ..distill import DistillConfig
from ..groupprune import MODES
from ..sparsetrain import SparseSchedule
from ..training import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict[str, str]] = {
    "pipeline": {"graph": "tiny-det.graph", "weights": "", "dataset": "", "seed": "0",
                 "out": "runs/default", "input": "64"},
    "data": {"train_seed": "1", "n_train": "512", "val_seed": "2", "n_val": "128", "n_classes": "3"},
    "loss": {"box": "1.0", "obj": "1.0", "noobj": "1.0", "cls": "1.0"},
    "train": {"epochs": "40", "lr0": "0.02", "lr_min": "0.0", "momentum": "0.9",
              "weight_decay": "0.0", "batch_size": "16", "flip": "true"},
    "sparse": {"s0": "0.02", "switch_fraction": "0.5", "keep_fraction": "0.7", "decay_factor": "0.01",
               "selection": "largest", "epochs": "40", "lr0": "0.01", "eval_every": "0"},
    "prune": {"P": "0.3", "mode": "proportional", "explicit_ratios": "", "weights": ""},
    "distill": {"betas": "1 1 1 1 1", "T": "3.0", "iou_thresh": "0.5",
                "cls_weight": "1.0", "box_weight": "1.0", "match_mode": "gt", "teacher": "original",
                "epochs": "30", "lr0": "0.01", "eval_every": "0", "student_seed": ""},
}

# command-line flag -> (section, key)
FLAG_KEYS = {
    "graph": ("pipeline", "graph"), "weights": ("pipeline", "weights"), "seed": ("pipeline", "seed"),
    "out": ("pipeline", "out"), "input": ("pipeline", "input"),
    "total_prune_ratio": ("prune", "P"), "sparse_rate": ("sparse", "s0"),
    "temperature": ("distill", "T"), "betas": ("distill", "betas"),
    "iou_thresh": ("distill", "iou_thresh"),
}


@dataclass(frozen=True)
class DataConfig:
    train_seed: int = 1
    n_train: int = 512
    val_seed: int = 2
    n_val: int = 128
    n_classes: int = 3


@dataclass(frozen=True)
class SparseStage:
    schedule: SparseSchedule
    train: TrainConfig
    eval_every: int = 0


@dataclass(frozen=True)
class PruneStage:
    P: float
    mode: str = "proportional"
    explicit_ratios: tuple[float, ...] | None = None
    weights: Path | None = None


@dataclass(frozen=True)
class DistillStage:
    cfg: DistillConfig
    train: TrainConfig
    teacher: str = "original"
    eval_every: int = 0
    student_seed: int | None = None  # data-order seed of finetune/distill; None = pipeline seed


@dataclass
class PipelineConfig:
    graph: Path
    weights: Path | None
    dataset: Path | None
    seed: int
    out: Path
    input_hw: tuple[int, int]
    data: DataConfig
    train: TrainConfig
    sparse: SparseStage
    prune: PruneStage
    distill: DistillStage
    overrides: list[str] = field(default_factory=list)
    source: Path | None = None

    def canonical(self) -> dict:
        """Everything that influences results; paths are replaced by file digests."""
        def digest(p: Path | None):
            return None if p is None else _file_digest(p)

        d = {
            "graph": digest(self.graph), "weights": digest(self.weights),
            "dataset": _dataset_digest(self.dataset), "seed": self.seed,
            "input_hw": list(self.input_hw), "data": asdict(self.data), "train": asdict(self.train),
            "sparse": asdict(self.sparse),
            "prune": {**asdict(self.prune), "weights": digest(self.prune.weights)},
            "distill": asdict(self.distill),
        }
        return json.loads(json.dumps(d, default=str))

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dataset_digest(root: Path | None) -> str | None:
    if root is None:
        return None
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def bundled_config_path(name: str = "tiny-det.ini") -> Path:
    from importlib.resources import files

    return Path(str(files("gcprune") / "data" / name))


def _resolve(raw: str, base: Path | None, bundled: bool = False) -> Path | None:
    if not raw:
        return None
    p = Path(raw).expanduser()
    candidates = [p] if p.is_absolute() else [Path.cwd() / p] + ([base / p] if base else [])
    if bundled:
        from ..netgraph import bundled_graph_path

        candidates.append(Path(str(bundled_graph_path(raw))))
    for c in candidates:
        if c.exists():
            return c.resolve()
    raise ConfigError(f"referenced path does not exist: {raw}")


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.replace(",", " ").split())


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


def _train(sec) -> TrainConfig:
    return TrainConfig(epochs=int(sec["epochs"]), lr0=float(sec["lr0"]), lr_min=float(sec["lr_min"]),
                       momentum=float(sec["momentum"]), weight_decay=float(sec["weight_decay"]),
                       batch_size=int(sec["batch_size"]), flip=_bool(sec["flip"]))


def parse_override(text: str) -> tuple[str, str, str]:
    """``section.key=value`` -> parts."""
    lhs, sep, value = text.partition("=")
    section, dot, key = lhs.strip().partition(".")
    if not sep or not dot or not key:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    return section, key, value.strip()


def load_config(path=None, overrides: Sequence[tuple[str, str, str]] = ()) -> PipelineConfig:
    """Read ``path`` over the defaults, then apply ``(section, key, value)`` overrides."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    base = None
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cp.read(path)
        base = path.resolve().parent
    applied = []
    for section, key, value in overrides:
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        cp[section][key] = value
        applied.append(f"{section}.{key}={value}")
    for section in cp.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in cp[section]:
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
    try:
        return _build(cp, base, applied, path)
    except (KeyError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid config: {e}") from e


def _build(cp, base, applied, path) -> PipelineConfig:
    pl, sp, pr, di = cp["pipeline"], cp["sparse"], cp["prune"], cp["distill"]
    size = [int(v) for v in pl["input"].replace(",", " ").split()]
    input_hw = (size[0], size[-1])
    loss = HardLossWeights(**{k: float(v) for k, v in cp["loss"].items()})
    train = _train(cp["train"])
    sparse_train = _train({**cp["train"], "epochs": sp["epochs"], "lr0": sp["lr0"]})
    distill_train = _train({**cp["train"], "epochs": di["epochs"], "lr0": di["lr0"]})
    train, sparse_train, distill_train = (
        TrainConfig(**{**asdict(t), "loss": loss}) for t in (train, sparse_train, distill_train))
    mode = pr["mode"]
    if mode not in MODES:
        raise ConfigError(f"prune.mode must be one of {MODES}, got {mode!r}")
    ratios = _floats(pr["explicit_ratios"]) or None
    if mode == "explicit" and ratios is None:
        raise ConfigError("prune.mode = explicit needs prune.explicit_ratios")
    teacher = di["teacher"]
    if teacher not in ("original", "sparse"):
        raise ConfigError(f"distill.teacher must be 'original' or 'sparse', got {teacher!r}")
    return PipelineConfig(
        graph=_resolve(pl["graph"], base, bundled=True),
        weights=_resolve(pl["weights"], base),
        dataset=_resolve(pl["dataset"], base),
        seed=int(pl["seed"]),
        out=Path(pl["out"]),
        input_hw=input_hw,
        data=DataConfig(**{k: int(v) for k, v in cp["data"].items()}),
        train=train,
        sparse=SparseStage(
            SparseSchedule(float(sp["s0"]), float(sp["switch_fraction"]), float(sp["keep_fraction"]),
                           float(sp["decay_factor"]), sp["selection"]),
            sparse_train, int(sp["eval_every"])),
        prune=PruneStage(float(pr["P"]), mode, ratios, _resolve(pr["weights"], base)),
        distill=DistillStage(
            DistillConfig(betas=_floats(di["betas"]), T=float(di["T"]),
                          iou_thresh=float(di["iou_thresh"]), cls_weight=float(di["cls_weight"]),
                          box_weight=float(di["box_weight"]), match_mode=di["match_mode"]),
            distill_train, teacher, int(di["eval_every"]),
            int(di["student_seed"]) if di["student_seed"].strip() else None),
        overrides=applied,
        source=Path(path).resolve() if path is not None else None,
    )
