import math

import numpy as np
import pytest

from gcprune.detectcore import decode_scale, gen_dataset, hard_loss, match_candidates, to_input
from gcprune.distill import (DistillConfig, attention_loss, attention_map, attention_vectors,
                             class_logits, default_taps, distill_train, finetune, soft_box_loss,
                             soft_class_loss, total_distill_loss)
from gcprune.engine import Network, Tensor, no_grad
from gcprune.groupprune import prune
from gcprune.netgraph import bundled_graph_path, init_weights, load_graph, weights_digest
from gcprune.training import TrainConfig, substream


def test_attention_map_example():
    feat = np.array([[[1, 0], [0, 1]], [[0, 1], [1, 0]]], float)
    am = attention_map(feat)
    assert np.allclose(am.q, [0.5, 0.5, 0.5, 0.5]) and am.source_scale == (2, 2)


def test_attention_map_zero_and_spike():
    assert np.all(attention_map(np.zeros((3, 4, 4))).q == 0)
    spike = np.zeros((1, 3, 3))
    spike[0, 1, 2] = -4.0
    q = attention_map(spike).q
    assert q[5] == 1.0 and np.count_nonzero(q) == 1


def test_batched_vectors_match_single_maps():
    x = np.random.default_rng(0).standard_normal((3, 4, 5, 5))
    x[1] = 0
    v = attention_vectors(Tensor(x)).data
    for i in range(3):
        assert np.allclose(v[i], attention_map(x[i]).q)


def test_attention_loss_examples():
    q = [np.array([0.6, 0.8])]
    assert attention_loss(q, q, [1000]).item() == 0
    assert attention_loss([np.array([1.0, 0])], [np.array([0, 1.0])], [1000]).item() == \
        pytest.approx(1000 * math.sqrt(2))
    assert attention_loss([np.array([1.0, 0])], [np.array([0, 1.0])], [0]).item() == 0
    with pytest.raises(ValueError):
        attention_loss(q, q, [1, 2])


def test_soft_class_examples():
    rng = np.random.default_rng(1)
    t = rng.standard_normal((4, 5))
    assert soft_class_loss([t], [t.copy()], 2.0).item() == pytest.approx(0, abs=1e-15)
    assert soft_class_loss([np.array([[1.0, 0]])], [np.array([[0, 1.0]])], 1.0).item() == \
        pytest.approx(0.4622, abs=1e-4)
    s = rng.standard_normal((4, 5))
    assert soft_class_loss([t], [s], 1000).item() < soft_class_loss([t], [s], 1).item()


def test_soft_class_empty_scale():
    assert soft_class_loss([np.zeros((0, 3))], [np.zeros((0, 3))], 3).item() == 0
    with pytest.raises(ValueError):
        soft_class_loss([np.zeros((1, 3))], [np.zeros((1, 3))], 0)


def test_soft_box_examples():
    t = np.array([[0.5, 0.5, 0.2, 0.2]])
    s = np.array([[0.5, 0.5, 0.2, 0.4]])
    idx = [(np.array([0]),)]
    assert soft_box_loss([t], [s], idx).item() == pytest.approx(0.2)
    assert soft_box_loss([t], [t], idx).item() == 0
    assert soft_box_loss([t], [s], [(np.zeros(0, int),)]).item() == 0


def test_total_loss():
    assert total_distill_loss(1.0, 2.0, 3.0, 4.0) == 10
    assert total_distill_loss(2.5, 0.0, 0.0, 0.0) == 2.5
    with pytest.raises(ValueError, match="soft_box"):
        total_distill_loss(1.0, 0.0, float("nan"), 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        DistillConfig(betas=(-1, 0, 0, 0, 0))
    with pytest.raises(ValueError):
        DistillConfig(T=0)
    with pytest.raises(ValueError):
        DistillConfig(iou_thresh=1.0)


@pytest.fixture(scope="module")
def setup():
    g = load_graph(bundled_graph_path("tiny-det.graph"))
    w = init_weights(g, substream(0, "init"))
    gam = {c: w[g.bn_of(c)]["gamma"] * np.random.default_rng(c).random(g.channels[c])
           for c in g.prunable_convs}
    *_, pg, pw = prune(g, w, gam, 0.3)
    return g, w, pg, pw, gen_dataset(3, 8)


def test_default_taps_one_per_group(setup):
    g, *_ = setup
    taps = default_taps(g)
    assert len(taps) == 5 and [g.group_of[t] for t in taps] == [1, 2, 3, 4, 5]


def test_identical_teacher_and_student_terms_vanish(setup):
    g, w, *_, data = setup
    net = Network(g, w, dtype=np.float64)
    x = to_input(data.images[:4], np.float64)
    labels = data.labels[:4]
    taps = default_taps(g)
    with no_grad():
        a, b = net.forward(x, taps=taps), net.forward(x, taps=taps)
    hard, _ = hard_loss(a.heads, labels, data.anchors)
    n_anchor = data.anchors.shape[1]
    cls = soft_class_loss([class_logits(h.data, n_anchor) for h in a.heads],
                          [class_logits(h, n_anchor) for h in b.heads], 3.0)
    idx = match_candidates([h.data for h in a.heads], data.anchors, labels, 0.5)
    boxes = [decode_scale(h.data, data.anchors[s]).boxes for s, h in enumerate(a.heads)]
    box = soft_box_loss(boxes, [bx.copy() for bx in boxes], idx)
    at = attention_loss([attention_vectors(a.features[t]).data for t in taps],
                        [attention_vectors(b.features[t]) for t in taps], [1000.0] * 5)
    assert cls.item() == 0 and box.item() == 0 and at.item() == 0
    assert total_distill_loss(hard, cls, box, at).item() == hard.item()


def test_zero_weight_distill_is_finetune(setup):
    g, w, pg, pw, data = setup
    tc = TrainConfig(epochs=2, batch_size=4)
    off = DistillConfig(betas=(0,) * 5, cls_weight=0, box_weight=0)
    d = distill_train(g, w, pg, pw, data, off, tc, substream(5, "student"))
    f = finetune(pg, pw, data, tc, substream(5, "student"))
    assert weights_digest(d.weights) == weights_digest(f.weights)
    assert [s["L_hard"] for s in d.history.steps] == [s["L_hard"] for s in f.history.steps]


def test_smoke_history_and_frozen_teacher(setup):
    g, w, pg, pw, data = setup
    before = weights_digest(w)
    res = distill_train(g, w, pg, pw, data, DistillConfig(betas=(1.0,) * 5),
                        TrainConfig(epochs=1, batch_size=4), substream(6, "student"))
    assert len(res.history.steps) == 2
    for s in res.history.steps:
        vals = [s[k] for k in ("L_hard", "L_soft_cls", "L_soft_box", "L_AT")]
        assert all(math.isfinite(v) for v in vals)
        assert s["loss"] == pytest.approx(sum(vals))
        assert s["L_AT"] > 0
    assert res.teacher_digest_before == res.teacher_digest_after == before


def test_mismatched_taps_rejected(setup):
    g, w, pg, pw, data = setup
    with pytest.raises(ValueError):
        distill_train(g, w, pg, pw, data, DistillConfig(betas=(1.0,) * 4),
                      TrainConfig(epochs=1), substream(0, "x"))
