import json
import re
import time

import pytest

from gcprune.cli import (ConfigError, build_tables, cmd_cost, cmd_report, load_config, run)
from gcprune.cli.config import parse_override
from gcprune.netgraph import bundled_graph_path

SMALL = """
[pipeline]
seed = {seed}
out = {out}
[data]
n_train = 24
n_val = 8
[train]
epochs = 1
batch_size = 8
[sparse]
epochs = 2
[distill]
epochs = 1
"""


def small_config(tmp_path, seed=3, name="run"):
    p = tmp_path / f"{name}.ini"
    p.write_text(SMALL.format(seed=seed, out=tmp_path / name))
    return p


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("full")
    cfg = small_config(tmp)
    assert run(["pipeline", "--config", str(cfg)]) == 0
    return tmp, cfg, tmp / "run"


def test_overrides_and_hash(tmp_path):
    cfg = small_config(tmp_path)
    a = load_config(cfg)
    b = load_config(cfg, [("prune", "P", "0.5")])
    assert a.prune.P == 0.3 and b.prune.P == 0.5
    assert a.config_hash != b.config_hash
    assert load_config(cfg).config_hash == a.config_hash
    moved = load_config(cfg, [("pipeline", "out", str(tmp_path / "elsewhere"))])
    assert moved.config_hash == a.config_hash


def test_unknown_key_and_bad_override(tmp_path, capsys):
    with pytest.raises(ConfigError):
        load_config(None, [("prune", "ratio", "0.3")])
    with pytest.raises(ConfigError):
        parse_override("prune.P")
    assert run(["prune", "--set", "nosuch.k=1", "--out", str(tmp_path)]) == 2
    assert "nosuch" in capsys.readouterr().err


def test_flags_map_to_keys(tmp_path):
    from gcprune.cli import build_parser, config_from_args

    args = build_parser().parse_args(["distill", "--config", str(small_config(tmp_path)),
                                      "--betas", "1,2,3,4,5", "--temperature", "2",
                                      "--total-prune-ratio", "0.4", "--sparse-rate", "0.001"])
    cfg = config_from_args(args)
    assert cfg.distill.cfg.betas == (1, 2, 3, 4, 5) and cfg.distill.cfg.T == 2
    assert cfg.prune.P == 0.4 and cfg.sparse.schedule.s0 == 0.001


def test_stage_order_errors_name_the_artifact(tmp_path, capsys):
    cfg = str(small_config(tmp_path))
    assert run(["distill", "--config", cfg]) == 2
    assert "train/weights.wts" in capsys.readouterr().err
    assert run(["prune", "--config", cfg, "--weights", str(tmp_path / "missing.wts")]) == 2
    assert "missing.wts" in capsys.readouterr().err


def test_over_prune_names_group(full_run, capsys):
    tmp, cfg, out = full_run
    assert run(["prune", "--config", str(cfg), "--total-prune-ratio", "0.95",
                "--set", f"prune.weights={out / 'sparse' / 'weights.wts'}",
                "--out", str(tmp / "over")]) == 1
    assert re.search(r"group \d would lose all channels", capsys.readouterr().err)


def test_full_report_structure(full_run):
    _, _, out = full_run
    text = (out / "report.md").read_text()
    for title in ("Sparse training", "Group pruning ratios", "Model cost", "Fine-tuning vs. distillation"):
        assert title in text
    tables, _ = build_tables(out)
    rows = tables["ratios"][1]
    assert [r[0] for r in rows] == ["1", "2", "3", "4", "5", "total"]
    assert [r[0] for r in tables["map"][1]] == ["original", "sparse", "pruned", "fine-tuned",
                                                 "distilled"]
    assert "absent" not in text


def test_manifests_and_stamps(full_run):
    _, _, out = full_run
    m = json.loads((out / "prune" / "manifest.json").read_text())
    assert m["stage"] == "prune" and m["seed"] == 3
    assert m["metrics"]["pruned_pre_vote"] == m["metrics"]["quota_total"] == round(0.3 * 624)
    assert m["metrics"]["max_deviation"] < 1e-3
    first = (out / "prune" / "masks.mask").read_text().splitlines()[0]
    assert first == f"# config_hash={m['config_hash']} seed=3"


def test_prune_only_report(full_run, tmp_path):
    _, _, out = full_run
    cfg = small_config(tmp_path)
    w = out / "sparse" / "weights.wts"
    assert run(["prune", "--config", str(cfg), "--set", f"prune.weights={w}"]) == 0
    cmd_report(tmp_path / "run")
    text = (tmp_path / "run" / "report.md").read_text()
    assert "Group pruning ratios" in text and "Model cost" in text
    tables, _ = build_tables(tmp_path / "run")
    assert tables["sparse"] is None and tables["map"] is None


def _skeleton(text):
    return re.sub(r"[0-9a-f]{16}|-?\d+(\.\d+)?(e-?\d+)?|inf|nan", "#", text)


def test_seed_changes_numbers_not_structure(full_run, tmp_path):
    _, _, out = full_run
    cfg = small_config(tmp_path, seed=4)
    assert run(["pipeline", "--config", str(cfg)]) == 0
    a = (out / "report.md").read_text()
    b = (tmp_path / "run" / "report.md").read_text()
    assert a != b and _skeleton(a) == _skeleton(b)
    ca = [line.split(",")[:3] for line in (out / "report.csv").read_text().splitlines()]
    cb = [line.split(",")[:3] for line in (tmp_path / "run" / "report.csv").read_text().splitlines()]
    assert ca == cb


def test_report_refuses_mixed_configs(full_run, tmp_path):
    import shutil

    _, _, out = full_run
    mixed = tmp_path / "mixed"
    shutil.copytree(out, mixed)
    m = json.loads((mixed / "finetune" / "manifest.json").read_text())
    m["config_hash"] = "0" * 16
    (mixed / "finetune" / "manifest.json").write_text(json.dumps(m))
    assert run(["report", str(mixed)]) == 1


def test_report_of_empty_dir_marks_sections_absent(tmp_path):
    assert run(["report", str(tmp_path)]) == 0
    assert (tmp_path / "report.md").read_text().count("absent") >= 4


def test_eval_and_hist(full_run, capsys):
    _, cfg, out = full_run
    assert run(["eval", "--config", str(cfg), "--stage", "distill"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert 0 <= res["mAP"] <= 1
    assert run(["hist", "--config", str(cfg), "--stage", "sparse"]) == 0
    assert (out / "hist-sparse" / "gamma_hist.csv").exists()


def test_cost_command(capsys):
    t0 = time.perf_counter()
    assert run(["cost", "--graph", "yolov4-voc.graph", "--input", "416"]) == 0
    text = capsys.readouterr().out
    assert time.perf_counter() - t0 < 5
    params = int(re.search(r"params\s+(\d+)", text).group(1))
    flops = int(re.search(r"flops\s+(\d+)", text).group(1))
    assert abs(params / 64.1e6 - 1) < 0.02 and abs(flops / 29.9e9 - 1) < 0.10
    assert "group" in cmd_cost(bundled_graph_path("tiny-det.graph"), (64, 64))
