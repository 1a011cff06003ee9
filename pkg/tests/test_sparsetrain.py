import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcprune.detectcore import gen_dataset
from gcprune.netgraph import bundled_graph_path, init_weights, load_graph, weights_digest
from gcprune.sparsetrain import (RateScheduler, SparseSchedule, export_gamma_histogram,
                                 gamma_histogram, read_histogram_csv, schedule_rates, sparse_penalty,
                                 train_sparse, write_history_csv)
from gcprune.training import TrainConfig, fit, hard_loss_fn, substream
from gcprune.engine import Network


def test_initial_rates_uniform():
    r = schedule_rates(SparseSchedule(0.00075), 0, 200, np.linspace(0.1, 1, 10))
    assert np.all(r.rates == 0.00075)


def test_rates_after_switch():
    gam = np.linspace(0.1, 1.0, 10)
    r = schedule_rates(SparseSchedule(0.00075), 100, 200, gam).rates
    assert np.sum(r == 0.00075) == 7
    assert np.sum(np.isclose(r, 7.5e-6)) == 3
    assert np.all(np.isclose(r[-3:], 7.5e-6))


def test_keep_all_is_constant_rate():
    r = schedule_rates(SparseSchedule(0.01, keep_fraction=1.0), 150, 200, np.ones(10)).rates
    assert np.all(r == 0.01)


def test_rates_follow_conv_layout():
    gam = {5: np.array([3.0, 0.1]), 2: np.array([0.2, 0.3, 4.0])}
    r = schedule_rates(SparseSchedule(1.0, keep_fraction=0.6), 9, 10, gam)
    assert np.allclose(r.for_conv(2), [1, 1, 0.01])
    assert np.allclose(r.for_conv(5), [0.01, 1])


@pytest.mark.parametrize("bad", [dict(s0=-1), dict(s0=1, switch_fraction=1.0),
                                 dict(s0=1, keep_fraction=1.5), dict(s0=1, decay_factor=0),
                                 dict(s0=1, selection="median")])
def test_schedule_validation(bad):
    with pytest.raises(ValueError):
        SparseSchedule(**bad)


def test_schedule_rejects_out_of_range_epoch():
    with pytest.raises(ValueError):
        schedule_rates(SparseSchedule(0.1), 10, 10, np.ones(3))
    with pytest.raises(ValueError):
        schedule_rates(SparseSchedule(0.1), 0, 10, np.zeros(0))


def test_scheduler_freezes_selection():
    sch = RateScheduler(SparseSchedule(1.0, switch_fraction=0.5, keep_fraction=0.5), 4)
    sch.rates(2, np.array([1.0, 2.0, 3.0, 4.0]))
    first = sch.decaying.copy()
    r = sch.rates(3, np.array([4.0, 3.0, 2.0, 1.0]))
    assert np.array_equal(sch.decaying, first) and sch.switched_at == 2
    assert np.allclose(r.rates, [1, 1, 0.01, 0.01])


def test_penalty_examples():
    pen, sub = sparse_penalty(np.array([0.5, -0.2]), np.full(2, 0.001))
    assert pen == pytest.approx(0.0007)
    assert np.allclose(sub, [0.001, -0.001])
    pen, sub = sparse_penalty(np.zeros(3), np.ones(3))
    assert pen == 0 and np.all(sub == 0)
    pen, sub = sparse_penalty(np.array([3.0, -1.0]), np.zeros(2))
    assert pen == 0 and np.all(sub == 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.floats(0, 1))
def test_penalty_is_rate_weighted_l1(vals, s):
    g = np.array(vals)
    pen, _ = sparse_penalty(g, np.full(len(g), s))
    assert pen == pytest.approx(s * np.abs(g).sum(), rel=1e-12, abs=1e-12)


def test_histogram_examples():
    edges, counts = gamma_histogram(np.ones(50))
    assert counts.sum() == 50 and np.count_nonzero(counts) == 1
    edges, counts = gamma_histogram(np.r_[np.zeros(20), np.ones(20)])
    nz = counts[counts > 0]
    assert len(nz) == 2 and nz[0] == nz[1] == 20


def test_histogram_export_round_trip(tmp_path):
    gam = {1: np.array([0.1, 0.2]), 4: np.array([0.9, 0.05, 0.5])}
    csv_path, svg_path = export_gamma_histogram(gam, tmp_path / "h.csv")
    rows = read_histogram_csv(csv_path)
    assert sum(c for *_, c in rows) == 5 and len(rows) == 64
    assert rows[0][0] == pytest.approx(0.05) and rows[-1][1] == pytest.approx(0.9)
    assert svg_path.read_text().startswith("<svg")


def test_history_csv(tmp_path):
    p = write_history_csv([{"epoch": 0, "loss": 1.5}, {"epoch": 1, "loss": 0.5, "penalty": 0.1}],
                          tmp_path / "h.csv", ("epoch", "loss", "penalty"))
    assert p.read_text().splitlines() == ["epoch,loss,penalty", "0,1.5,", "1,0.5,0.1"]


@pytest.fixture(scope="module")
def small():
    g = load_graph(bundled_graph_path("tiny-det.graph"))
    return g, init_weights(g, substream(0, "init")), gen_dataset(3, 16)


def test_zero_rate_equals_plain_training(small):
    g, w, data = small
    cfg = TrainConfig(epochs=2, batch_size=8)
    res = train_sparse(g, w, data, SparseSchedule(0.0), cfg, substream(1, "data"))
    net = Network(g, w)
    fit(net, data, cfg, substream(1, "data"), hard_loss_fn(data.anchors))
    assert weights_digest(res.weights) == weights_digest(net.state())


def test_one_step_per_batch(small):
    g, w, data = small
    res = train_sparse(g, w, data, SparseSchedule(0.01), TrainConfig(epochs=1, batch_size=16),
                       substream(1, "data"))
    assert len(res.history.steps) == 1
    e = res.history.epochs[0]
    assert e["loss"] == pytest.approx(e["detection"] + e["penalty"])
    assert "mean_abs_gamma" in e and len(e["histogram"][1]) == 64


def test_penalty_shrinks_gammas(small):
    g, w, data = small
    cfg = TrainConfig(epochs=2, batch_size=8, lr0=0.01)
    sparse = train_sparse(g, w, data, SparseSchedule(0.5), cfg, substream(1, "data"))
    plain = train_sparse(g, w, data, SparseSchedule(0.0), cfg, substream(1, "data"))
    assert sparse.history.epochs[-1]["mean_abs_gamma"] < plain.history.epochs[-1]["mean_abs_gamma"] - 0.01


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=30),
       st.floats(0, 1), st.integers(2, 40))
def test_rates_never_increase(vals, keep, total):
    sch = RateScheduler(SparseSchedule(0.01, keep_fraction=keep), total)
    gam = np.array(vals)
    prev = None
    for e in range(total):
        r = sch.rates(e, gam).rates
        assert np.all(r <= 0.01)
        if prev is not None:
            assert np.all(r <= prev)
        prev = r
