import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biggat.graph import build_graph, grid_graph
from biggat.spatial import (SpatialStatsError, global_morans_i, nhop_morans_i,
                            permutation_significance, select_neighborhood_order)
from biggat.synthetic import smooth

from conftest import random_graph


def naive_morans_i(x, w):
    n = len(x)
    mean = sum(x) / n
    num = 0.0
    wsum = 0.0
    for i in range(n):
        for j in range(n):
            num += w[i][j] * (x[i] - mean) * (x[j] - mean)
            wsum += w[i][j]
    den = sum((xi - mean) ** 2 for xi in x)
    return n / wsum * num / den


def test_hand_cases(cycle4):
    assert global_morans_i([1, -1, 1, -1], cycle4.adjacency) == pytest.approx(-1.0, abs=1e-12)
    two = build_graph(list("abcd"), [("a", "b"), ("c", "d")])
    assert global_morans_i([1, 1, -1, -1], two.adjacency) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("values, weights, msg", [
    ([2, 2, 2, 2], np.ones((4, 4)) - np.eye(4), "zero variance"),
    ([1, 2, 3], np.zeros((3, 3)), "all-zero"),
    ([1, 2, 3], np.ones((2, 2)) - np.eye(2), "shape"),
])
def test_degenerate_inputs(values, weights, msg):
    with pytest.raises(SpatialStatsError, match=msg):
        global_morans_i(values, weights)


def test_nhop_cases(path3, triangle):
    path4 = build_graph(list("ABCD"), [("A", "B"), ("B", "C"), ("C", "D")])
    x = [1.0, 1.0, -1.0, -1.0]
    assert nhop_morans_i(x, path4, 1) == global_morans_i(x, path4.adjacency)
    # pairs (A,C),(B,D): N/W = 1, sum w z z = -4, sum z^2 = 4
    assert nhop_morans_i(x, path4, 2) == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(SpatialStatsError, match="no 2-th order pairs"):
        nhop_morans_i([1, 2, 3], triangle, 2)


def test_permutation_determinism_and_sign():
    g = grid_graph(6, 6)
    x = np.random.default_rng(3).normal(size=g.N)
    a = permutation_significance(x, g, 1, 199, seed=11)
    b = permutation_significance(x, g, 1, 199, seed=11)
    assert a == b
    assert 0 < a.p_value <= 1
    with pytest.raises(SpatialStatsError):
        permutation_significance(x, g, 1, 50)


def test_permutation_two_components():
    ids = [f"{i:02d}" for i in range(10)]
    edges = [(ids[i], ids[i + 1]) for i in range(4)] + [(ids[i], ids[i + 1]) for i in range(5, 9)]
    g = build_graph(ids, edges)
    x = [1.0] * 5 + [-1.0] * 5
    res = permutation_significance(x, g, 1, 999, seed=0)
    assert res.statistic == pytest.approx(1.0)
    assert res.p_value <= 0.1
    assert res.z_score > 0


def test_zero_permutation_variance_flags_z():
    # every permutation of a 2-node graph gives the same statistic
    g = build_graph(["a", "b"], [("a", "b")])
    with pytest.warns(RuntimeWarning):
        res = permutation_significance([0.0, 1.0], g, 1, 99, seed=0)
    assert np.isnan(res.z_score) and 0 < res.p_value <= 1


def test_select_order_range_two():
    # one closed-neighborhood averaging pass correlates nodes up to exactly 2 hops
    g = grid_graph(20, 20)
    picks = []
    for seed in range(5):
        x = smooth(np.random.default_rng(seed).normal(size=g.N), g.adjacency, 1)
        picks.append(select_neighborhood_order(x, g, n_max=6, seed=seed))
    assert int(np.median(picks)) == 2


def test_select_order_white_noise():
    g = grid_graph(20, 20)
    picks = [select_neighborhood_order(np.random.default_rng(100 + s).normal(size=g.N), g, seed=s)
             for s in range(5)]
    assert int(np.median(picks)) == 1


def test_select_order_validates():
    g = grid_graph(4, 4)
    x = np.arange(16.0)
    with pytest.raises(SpatialStatsError):
        select_neighborhood_order(x, g, n_max=0)
    with pytest.raises(SpatialStatsError):
        select_neighborhood_order(x, g, alpha=1.5)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 20))
def test_matches_naive_oracle(seed, n):
    rng = np.random.default_rng(seed)
    w = np.triu(rng.random((n, n)) * (rng.random((n, n)) < 0.4), 1)
    w = w + w.T
    if not w.any():
        w[0, 1] = w[1, 0] = 1.0
    x = rng.normal(size=n)
    assert global_morans_i(x, w) == pytest.approx(naive_morans_i(x.tolist(), w.tolist()), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50).filter(lambda a: abs(a) > 1e-3), st.floats(-100, 100))
def test_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 15, 0.3)
    if not g.adjacency.any():
        return
    x = rng.normal(size=g.N)
    assert global_morans_i(a * x + b, g.adjacency) == pytest.approx(global_morans_i(x, g.adjacency), abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_p_value_range(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 12, 0.3)
    if not g.adjacency.any():
        return
    res = permutation_significance(rng.normal(size=g.N), g, 1, 99, seed=seed % 1000)
    assert 0 < res.p_value <= 1


def test_largest_rule_accepts_isolated_far_orders():
    g = grid_graph(20, 20)
    x = smooth(np.random.default_rng(1).normal(size=g.N), g.adjacency, 1)
    assert select_neighborhood_order(x, g, seed=1, rule="contiguous") == 2
    assert select_neighborhood_order(x, g, seed=1, rule="largest") > 2
    with pytest.raises(SpatialStatsError):
        select_neighborhood_order(x, g, rule="bogus")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["contiguous", "largest"]))
def test_selected_order_is_significant_or_fallback(seed, rule):
    rng = np.random.default_rng(seed)
    g = grid_graph(8, 8)
    x = smooth(rng.normal(size=g.N), g.adjacency, int(rng.integers(0, 3)))
    n = select_neighborhood_order(x, g, n_max=4, n_perm=99, seed=seed % 97, rule=rule)
    assert 1 <= n <= 4
    if n > 1:
        assert permutation_significance(x, g, n, 99, seed % 97 + n).significant(0.1)
