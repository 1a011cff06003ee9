import numpy as np
import pytest

from gcprune.groupprune import (MaskSet, PruneError, apply_surgery, build_masks, finalize_masks,
                                largest_remainder, plan_thresholds, prune, read_masks,
                                verify_equivalence, vote_public_mask, write_masks, write_prune_report)
from gcprune.netgraph import (bundled_graph_path, count_cost, group_members, init_weights,
                              load_graph, parse_graph, weights_digest)

import randgraph

TWO_GROUPS = """
0 conv out=4 k=3 s=1 cin=3 group=1 inputs=[]
1 bn inputs=[0]
2 act fn=leaky inputs=[1]
3 conv out=8 k=3 s=1 group=2 inputs=[2]
4 bn inputs=[3]
5 act fn=leaky inputs=[4]
"""


@pytest.fixture(scope="module")
def two():
    g = parse_graph(TWO_GROUPS, n_groups=2, require_heads=False)
    gam = {0: np.array([0.9, 0.5, 0.1, 0.05]),
           3: np.array([0.8, 0.7, 0.6, 0.4, 0.3, 0.2, 0.02, 0.01])}
    return g, gam


@pytest.fixture(scope="module")
def tiny():
    return load_graph(bundled_graph_path("tiny-det.graph"))


def test_plan_two_groups(two):
    g, gam = two
    plan = plan_thresholds(g, gam, 0.5)
    assert [plan.groups[i].quota for i in (1, 2)] == [2, 4]
    assert [plan.groups[i].threshold for i in (1, 2)] == [0.1, 0.3]
    assert plan.total_quota == 6


def test_two_groups_masks(two):
    g, gam = two
    m = build_masks(g, gam, plan_thresholds(g, gam, 0.5))
    assert m[0].tolist() == [1, 1, 0, 0]
    assert m[3].tolist() == [1, 1, 1, 1, 0, 0, 0, 0]


def test_zero_ratio_keeps_everything(two):
    g, gam = two
    plan = plan_thresholds(g, gam, 0.0)
    assert plan.total_quota == 0
    assert build_masks(g, gam, plan) == MaskSet.all_ones(g)


def test_ties_break_by_index():
    g = parse_graph("0 conv out=4 k=1 s=1 cin=1 inputs=[]\n1 bn inputs=[0]\n2 act fn=leaky inputs=[1]\n", require_heads=False)
    gam = {0: np.full(4, 0.5)}
    m = build_masks(g, gam, plan_thresholds(g, gam, 0.5))
    assert m[0].tolist() == [0, 0, 1, 1]


def test_last_channel_is_never_taken():
    g = parse_graph(TWO_GROUPS, n_groups=1, require_heads=False)
    gam = {0: np.array([0.01, 0.02, 0.03, 0.04]), 3: np.full(8, 1.0)}
    plan = plan_thresholds(g, gam, 0.3)
    m = build_masks(g, gam, plan)
    assert m[0].sum() >= 1 and m.n_pruned() == plan.total_quota == 4
    skip = plan_thresholds(g, {0: gam[0], 3: np.full(8, 0.001)}, 0.6)
    m = build_masks(g, {0: gam[0], 3: np.full(8, 0.001)}, skip)
    assert m.n_pruned() == skip.total_quota and m[3].sum() == 1


def test_over_pruning_names_group(tiny):
    gam = {c: np.ones(tiny.channels[c]) for c in tiny.prunable_convs}
    with pytest.raises(PruneError) as e:
        plan_thresholds(tiny, gam, 0.95)
    assert e.value.group is not None and f"group {e.value.group}" in str(e.value)


def test_bad_ratio():
    g = parse_graph(TWO_GROUPS, require_heads=False)
    with pytest.raises(ValueError):
        plan_thresholds(g, {0: np.ones(4), 3: np.ones(8)}, 1.0)


def test_largest_remainder():
    assert largest_remainder([1, 1, 1], 2) == [1, 1, 0]
    assert largest_remainder([136, 80, 120, 96, 192], 187) == [41, 24, 36, 29, 57]
    assert sum(largest_remainder([3, 7, 11], 10)) == 10


def test_yolo_explicit_ratios():
    g = load_graph(bundled_graph_path("yolov4-voc.graph"))
    gam = {c: np.random.default_rng(c).random(g.channels[c]) for c in g.prunable_convs}
    ratios = (0.10, 0.25, 0.96, 0.87, 0.50)
    plan = plan_thresholds(g, gam, 0.0, "explicit", ratios)
    for i, r in zip(range(1, 6), ratios):
        gp = plan.groups[i]
        assert abs(gp.ratio - r) <= 0.5 / gp.n_channels
    assert plan.P == pytest.approx(plan.total_quota / plan.n_total)


def test_explicit_needs_ratio_per_group(two):
    g, gam = two
    with pytest.raises(ValueError):
        plan_thresholds(g, gam, 0.0, "explicit", (0.1,))


def test_redundancy_weighted_follows_small_gammas(two):
    g, gam = two
    skewed = {0: np.array([0.9, 0.8, 0.7, 0.6]), 3: gam[3]}
    plan = plan_thresholds(g, skewed, 0.5, "redundancy_weighted")
    assert plan.total_quota == 6
    assert plan.groups[2].quota > plan.groups[1].quota


def test_redundancy_weighted_respects_capacity(tiny):
    rng = np.random.default_rng(5)
    gam = {c: rng.random(tiny.channels[c]) for c in tiny.prunable_convs}
    g1 = group_members(tiny)[1]
    for c in g1:
        gam[c] *= 1e-3
    plan = plan_thresholds(tiny, gam, 0.4, "redundancy_weighted")
    assert plan.total_quota == round(0.4 * plan.n_total)
    assert all(gp.quota <= gp.capacity for gp in plan.groups.values())


def test_vote_examples():
    m = [np.array([1, 0, 1], bool), np.array([0, 0, 1], bool), np.array([1, 1, 1], bool)]
    assert vote_public_mask(m).tolist() == [1, 0, 1]
    assert vote_public_mask([np.array([1, 0], bool), np.array([1, 1], bool)]).tolist() == [1, 0]
    same = np.array([1, 0, 1, 0], bool)
    assert vote_public_mask([same] * 4).tolist() == same.tolist()
    assert vote_public_mask([same]).tolist() == same.tolist()


def test_vote_never_empties_a_set():
    m = [np.zeros(3, bool), np.array([0, 0, 1], bool)]
    assert vote_public_mask(m).tolist() == [0, 0, 1]
    pub = vote_public_mask(m, [np.array([0.1, 0.9, 0.2]), np.array([0.1, 0.8, 0.3])])
    assert pub.tolist() == [0, 1, 0]


def test_vote_rejects_ragged():
    with pytest.raises(ValueError):
        vote_public_mask([np.ones(2, bool), np.ones(3, bool)])


def _vote_oracle(mat):
    n, c = mat.shape
    out = []
    for j in range(c):
        z = sum(1 for i in range(n) if not mat[i, j])
        out.append(not z >= n / 2)
    return np.array(out)


def test_vote_matches_counting_oracle():
    rng = np.random.default_rng(11)
    for k in range(300):
        n = 2 * int(rng.integers(1, 5)) if k % 2 else int(rng.integers(1, 9))
        c = int(rng.integers(1, 65))
        mat = rng.random((n, c)) < rng.random()
        want = _vote_oracle(mat)
        if want.any():
            assert np.array_equal(vote_public_mask(list(mat)), want)


RESIDUAL_CHAIN = """
0 conv out=3 k=1 s=1 cin=2 layer=0 inputs=[]
1 bn inputs=[0]
2 act fn=mish inputs=[1]
3 conv out=3 k=1 s=1 layer=1 inputs=[2]
4 bn inputs=[3]
5 act fn=mish inputs=[4]
6 add layer=2 inputs=[5,2]
7 conv out=3 k=1 s=1 layer=3 inputs=[6]
8 bn inputs=[7]
9 act fn=mish inputs=[8]
10 add layer=4 inputs=[9,6]
"""


def test_coupled_set_of_three():
    g = parse_graph(RESIDUAL_CHAIN, require_heads=False)
    assert [sorted(s.conv_ids) for s in g.coupled] == [[0, 3, 7]]
    pre = MaskSet({0: np.array([1, 0, 1], bool), 3: np.array([0, 0, 1], bool),
                   7: np.array([1, 1, 1], bool)})
    out = finalize_masks(g, pre)
    assert all(out[c].tolist() == [1, 0, 1] for c in (0, 3, 7))


def test_no_adds_leaves_masks_alone():
    g = parse_graph(TWO_GROUPS, require_heads=False)
    pre = MaskSet({0: np.array([1, 0, 0, 1], bool), 3: np.array([0, 1] * 4, bool)})
    assert finalize_masks(g, pre) == pre


def test_all_ones_surgery_is_identity(tiny):
    w = init_weights(tiny, np.random.default_rng(0))
    pg, pw = apply_surgery(tiny, w, MaskSet.all_ones(tiny))
    assert pg.to_text() == tiny.to_text()
    assert weights_digest(pw) == weights_digest(w)


def test_two_conv_param_delta():
    g = parse_graph(TWO_GROUPS, n_groups=2, require_heads=False)
    w = init_weights(g, np.random.default_rng(0))
    m = MaskSet.all_ones(g)
    m[0] = np.array([1, 0, 1, 1], bool)
    pg, pw = apply_surgery(g, w, m)
    before, after = count_cost(g, (32, 32)), count_cost(pg, (32, 32))
    # one filter of conv 0 (27 weights) and one input slice of conv 3 (9 * 8)
    assert before.conv_params - after.conv_params == 27 + 72
    assert pw[3]["weight"].shape == (8, 3, 3, 3)


@pytest.mark.parametrize("P", [0.1, 0.3, 0.5])
def test_tiny_surgery_equivalence(tiny, P):
    rng = np.random.default_rng(int(P * 10))
    w = init_weights(tiny, rng, dtype=np.float64)
    for bn in w.values():
        if "running_mean" in bn:
            bn["running_mean"][:] = rng.standard_normal(bn["running_mean"].shape)
            bn["running_var"][:] = rng.random(bn["running_var"].shape) + 0.5
            bn["beta"][:] = rng.standard_normal(bn["beta"].shape)
    gam = randgraph.random_gammas(tiny, rng)
    plan, pre, m, pg, pw = prune(tiny, w, gam, P)
    assert count_cost(pg, (64, 64)).flops < count_cost(tiny, (64, 64)).flops
    probes = rng.standard_normal((4, 3, 64, 64))
    assert verify_equivalence(tiny, w, m, pg, pw, probes) < 1e-10


def test_equivalence_catches_mutation(tiny):
    rng = np.random.default_rng(1)
    w = init_weights(tiny, rng, dtype=np.float64)
    gam = randgraph.random_gammas(tiny, rng)
    *_, m, pg, pw = prune(tiny, w, gam, 0.3)
    c = max(pg.prunable_convs)
    pw[c]["weight"] = pw[c]["weight"] + 0.1
    assert verify_equivalence(tiny, w, m, pg, pw, rng.standard_normal((1, 3, 64, 64))) > 1e-3


def test_mask_and_report_files(tmp_path, tiny):
    rng = np.random.default_rng(2)
    gam = randgraph.random_gammas(tiny, rng)
    plan, pre, m, *_ = prune(tiny, init_weights(tiny, rng), gam, 0.3)
    back, header = read_masks(write_masks(tmp_path / "m.mask", m, plan))
    assert back == m
    assert float(header["P"]) == 0.3 and int(header["quota_total"]) == plan.total_quota
    lines = write_prune_report(tmp_path / "r.csv", plan, m).read_text().splitlines()
    assert lines[0] == "group,N_i,quota_i,t_i,pruned_count,ratio" and len(lines) == 6


def test_budget_exact_on_random_graphs():
    rng = np.random.default_rng(2024)
    for k in range(60):
        g = randgraph.random_detector(rng)
        gam = randgraph.random_gammas(g, rng, ties=k % 3 == 0)
        P = float(rng.uniform(0, 0.45))
        try:
            plan = plan_thresholds(g, gam, P)
        except PruneError:
            continue
        assert plan.total_quota == round(P * plan.n_total)
        pre = build_masks(g, gam, plan)
        for gp in plan.groups.values():
            assert pre.n_pruned(gp.convs) == gp.quota
        out = finalize_masks(g, pre, gam)
        for s in g.coupled:
            ms = [out[c] for c in s.conv_ids]
            assert all(np.array_equal(ms[0], x) for x in ms)


def test_pruned_channels_never_outrank_kept_ones():
    rng = np.random.default_rng(77)
    for k in range(40):
        g = randgraph.random_detector(rng)
        gam = randgraph.random_gammas(g, rng, ties=k % 2 == 0)
        try:
            plan = plan_thresholds(g, gam, float(rng.uniform(0.05, 0.5)))
        except PruneError:
            continue
        pre = build_masks(g, gam, plan)
        for gp in plan.groups.values():
            cut = [abs(gam[c][j]) for c in gp.convs for j in np.flatnonzero(~pre[c])]
            # a sole survivor is kept by the guard whatever its rank
            kept = [abs(gam[c][j]) for c in gp.convs if pre[c].sum() > 1
                    for j in np.flatnonzero(pre[c])]
            if cut and kept:
                assert max(cut) <= min(kept)
            if cut and all(pre[c].sum() > 1 for c in gp.convs):
                assert max(cut) <= gp.threshold


def test_cost_falls_as_ratio_grows():
    g = load_graph(bundled_graph_path("tiny-det.graph"))
    w = init_weights(g, np.random.default_rng(0))
    rng = np.random.default_rng(5)
    gam = {c: rng.random(g.channels[c]) for c in g.prunable_convs}
    last = count_cost(g, (64, 64))
    for P in (0.1, 0.2, 0.3, 0.4, 0.5):
        pg = prune(g, w, gam, P)[3]
        now = count_cost(pg, (64, 64))
        assert now.params < last.params and now.flops < last.flops
        last = now
