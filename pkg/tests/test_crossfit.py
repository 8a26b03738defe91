import itertools
import math

import numpy as np
import pytest

from drcombine.crossfit import (
    active_sizes,
    assign_folds,
    build_groups,
    build_plan,
    choose_active_subset,
    dump_plan,
    ratio_bounds,
)
from drcombine.design import cluster_probs_for, sampford_draw
from drcombine.errors import ConfigurationError


def test_groups_hand_ranking():
    piC = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8])
    g = build_groups(piC, 4)
    np.testing.assert_array_equal(g.group_of_cluster, [0, 0, 1, 1, 2, 2, 3, 3])
    np.testing.assert_allclose(g.group_mean_pic, [0.15, 0.35, 0.55, 0.75])


def test_groups_constant_input():
    g = build_groups(np.full(12, 0.3), 4)
    np.testing.assert_allclose(g.group_mean_pic, 0.3)
    np.testing.assert_array_equal(g.sizes(), [3, 3, 3, 3])


def test_single_group():
    piC = np.random.default_rng(0).random(10)
    g = build_groups(piC, 1)
    assert g.group_mean_pic[0] == pytest.approx(piC.mean())


def test_too_many_groups():
    with pytest.raises(ConfigurationError):
        build_groups(np.ones(3), 4)


def test_equal_folds_when_divisible():
    RC = np.zeros(1000, dtype=bool)
    RC[:150] = True
    plan = assign_folds(build_groups(np.full(1000, 0.15), 1), RC, 5, np.random.default_rng(0))
    np.testing.assert_array_equal(plan.M_lk[0], [30] * 5)
    np.testing.assert_array_equal(plan.J_lk[0], [200] * 5)


def test_leftover_counts_are_a_permutation():
    RC = np.zeros(20, dtype=bool)
    RC[:7] = True
    plan = assign_folds(build_groups(np.full(20, 0.35), 1), RC, 5, np.random.default_rng(1))
    assert sorted(plan.M_lk[0]) == [1, 1, 1, 2, 2]


def test_leftovers_spread_exchangeably():
    # with 7 sampled clusters and 5 folds each fold gets a leftover with probability 2/5
    RC = np.zeros(7, dtype=bool)
    RC[:] = True
    groups = build_groups(np.full(7, 0.5), 1)
    n = 4000
    hits = np.zeros(5)
    for s in range(n):
        hits += assign_folds(groups, RC, 5, np.random.default_rng(s)).M_lk[0] == 2
    # oracle: enumerate placements of the two leftovers on distinct folds
    pairs = list(itertools.combinations(range(5), 2))
    oracle = np.array([sum(k in p for p in pairs) for k in range(5)]) / len(pairs)
    assert np.all(np.abs(hits / n - oracle) < 3 * np.sqrt(0.4 * 0.6 / n))


def test_active_sizes_single_group_divisible():
    RC = np.zeros(1000, dtype=bool)
    RC[:150] = True
    plan = build_plan(np.full(1000, 0.15), RC, 5, 1, 0.01, np.random.default_rng(0))
    assert plan.active[0].subsample_size[0] == 120
    assert plan.active[0].multiplier[0] == 1.0


def test_active_sizes_single_group_not_divisible():
    RC = np.zeros(1000, dtype=bool)
    RC[:152] = True
    plan = assign_folds(build_groups(np.full(1000, 0.152), 1), RC, 5, np.random.default_rng(0))
    C, mult = active_sizes(plan, 0, 0.01)
    assert C[0] == 121
    assert mult[0] == pytest.approx(121 / 121.6, abs=1e-12)


def test_active_sizes_unequal_formula():
    from drcombine.crossfit import FoldPlan, ProbabilityGroups

    groups = ProbabilityGroups(2, np.zeros(10, dtype=np.int64), np.array([0.15, 0.5]))
    plan = FoldPlan(
        K=5,
        groups=groups,
        sampled=np.zeros(10, dtype=bool),
        fold_of_cluster=np.zeros(10, dtype=np.int64),
        M_lk=np.array([[7, 7, 7, 7, 8], [1, 1, 1, 1, 1]]),
        J_lk=np.array([[48, 48, 48, 48, 48], [2, 2, 2, 2, 2]]),
    )
    C, mult = active_sizes(plan, 0, 0.01)
    assert C[0] == 28
    assert mult[0] == pytest.approx(28 / 28.8, abs=1e-12)


def test_degenerate_group_warns(caplog):
    # tiny group mean probability makes C = 0 while sampled clusters exist
    piC = np.concatenate([np.full(8, 0.01), np.full(8, 0.9)])
    RC = np.zeros(16, dtype=bool)
    RC[[0, 1, 8, 9, 10, 11, 12, 13]] = True
    with caplog.at_level("WARNING"):
        plan = build_plan(piC, RC, 2, 2, 0.01, np.random.default_rng(0))
    assert plan.degenerate_count > 0
    assert "empty active subset" in caplog.text


def test_k1_plan_uses_everyone():
    RC = np.array([True, False, True, True, False])
    plan = build_plan(np.full(5, 0.6), RC, 1, 4, 0.01, np.random.default_rng(0))
    assert plan.K == 1
    np.testing.assert_array_equal(plan.active_mask(0), RC)
    np.testing.assert_array_equal(plan.cluster_multiplier(0), 1.0)


def _check_plan(plan, delta):
    L, K = plan.M_lk.shape
    g = plan.groups.group_of_cluster
    for l in range(L):
        Ml = int(plan.M_l[l])
        assert set(plan.M_lk[l]) <= {Ml // K, Ml // K + 1}
        assert plan.M_lk[l].sum() == Ml
    for k in range(K):
        act = plan.active[k]
        pic = plan.groups.group_mean_pic
        for l in range(L):
            outside = plan.J_l[l] - plan.J_lk[l, k]
            if L == 1:
                M = int(plan.M_l[0])
                C = M - math.ceil(M / K)
                mult = C / (M - M / K)
            else:
                target = math.floor(pic[l] * (1 - delta) * outside)
                C = min(target, int(plan.M_l[l] - plan.M_lk[l, k]))
                mult = target / (pic[l] * outside)
            members = act.clusters[g[act.clusters] == l]
            assert members.size == C
            assert abs(act.multiplier[l] - mult) <= 1e-12
        # active clusters are sampled and out of fold
        assert plan.sampled[act.clusters].all()
        assert (plan.fold_of_cluster[act.clusters] != k).all()


def test_plan_invariants_many_plans(pop1, small_pop):
    rng = np.random.default_rng(0)
    count = 0
    for pop, M in ((pop1, 150), (pop1, 50), (small_pop, 12)):
        for kind, L in (("sampford", 4), ("srswor", 1)):
            piC = cluster_probs_for(pop, M, kind)
            for _ in range(167):
                RC = sampford_draw(piC, rng) if kind == "sampford" else np.isin(np.arange(pop.J), rng.choice(pop.J, M, replace=False))
                plan = build_plan(piC, RC, 5, L, 0.01, rng)
                _check_plan(plan, 0.01)
                count += 1
    assert count >= 1000


def test_ratio_bounds_hold_mostly(pop1):
    # the floor-based bracket on M_lk/J_lk - M_l/J_l; recorded, not enforced, when J_lk falls one short
    rng = np.random.default_rng(1)
    piC = cluster_probs_for(pop1, 150, "sampford")
    inside = total = 0
    for _ in range(50):
        plan = build_plan(piC, sampford_draw(piC, rng), 5, 4, 0.01, rng)
        for l in range(4):
            lo, hi = ratio_bounds(int(plan.M_l[l]), int(plan.J_l[l]), 5)
            d = plan.M_lk[l] / plan.J_lk[l] - plan.M_l[l] / plan.J_l[l]
            inside += int(np.sum((d >= lo - 1e-12) & (d <= hi + 1e-12)))
            total += d.size
    assert inside / total > 0.9


def test_plan_reproducible_and_independent_of_outcomes(small_pop):
    piC = cluster_probs_for(small_pop, 12, "sampford")
    RC = sampford_draw(piC, np.random.default_rng(2))
    a = build_plan(piC, RC, 3, 2, 0.01, np.random.default_rng(7))
    b = build_plan(piC, RC, 3, 2, 0.01, np.random.default_rng(7))
    np.testing.assert_array_equal(a.fold_of_cluster, b.fold_of_cluster)
    for x, y in zip(a.active, b.active):
        np.testing.assert_array_equal(x.clusters, y.clusters)


def test_dump_plan(tmp_path, small_pop):
    piC = cluster_probs_for(small_pop, 12, "sampford")
    RC = sampford_draw(piC, np.random.default_rng(2))
    plan = build_plan(piC, RC, 3, 2, 0.01, np.random.default_rng(7))
    path = tmp_path / "plan.csv"
    dump_plan(plan, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("cluster_id,fold,group,sampled,active_1")
    assert len(lines) == small_pop.J + 1


def test_bad_delta():
    RC = np.array([True, True, False, False])
    plan = assign_folds(build_groups(np.full(4, 0.5), 1), RC, 2, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        choose_active_subset(plan, 0, 1.0, np.random.default_rng(0))
