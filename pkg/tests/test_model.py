import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biggat import autodiff as ad
from biggat.graph import build_graph, grid_graph, neighborhood_sets
from biggat.model import (ModelConfig, ModelParams, Neighborhoods, attention_step, bimodal_embed,
                          forward, gru_step, init_params, loss_value, loss_and_grad, params_from_json,
                          params_to_json)

from conftest import random_graph


def slots_for(params):
    t = ad.Tape()
    return t, {k: t.param(k, v) for k, v in params.arrays.items()}


def random_params(seed, scale=1.0):
    p = init_params(seed)
    rng = np.random.default_rng(seed + 1)
    return ModelParams({k: v + scale * rng.normal(size=v.shape) * 0.3 for k, v in p.arrays.items()})


# ---- straight-line oracle, one node at a time

def lrelu(v):
    return v if v > 0 else 0.2 * v


def oracle_attention(p, M, sets):
    W, a = p["attn_W"], p["attn_a"]
    proj = [[sum(W[i][j] * m[j] for j in range(len(m))) for i in range(len(W))] for m in M]
    H = []
    for v, nb in enumerate(sets):
        scores = []
        for u in nb:
            s = sum(a[i] * proj[v][i] for i in range(3)) + sum(a[3 + i] * proj[u][i] for i in range(3))
            scores.append(lrelu(s))
        mx = max(scores)
        ex = [math.exp(s - mx) for s in scores]
        tot = sum(ex)
        H.append([sum(ex[k] / tot * proj[u][i] for k, u in enumerate(nb)) for i in range(3)])
    return H


def oracle_gru(p, m, h):
    sig = lambda x: 1 / (1 + math.exp(-x))
    mv = lambda A, x: [sum(A[i][j] * x[j] for j in range(3)) for i in range(3)]
    z = [sig(a + b + c) for a, b, c in zip(mv(p["W_z"], h), mv(p["U_z"], m), p["b_z"])]
    r = [sig(a + b + c) for a, b, c in zip(mv(p["W_r"], h), mv(p["U_r"], m), p["b_r"])]
    rm = [ri * mi for ri, mi in zip(r, m)]
    c = [math.tanh(a + b + d) for a, b, d in zip(mv(p["W_h"], h), mv(p["U_h"], rm), p["b_h"])]
    return [(1 - zi) * mi + zi * ci for zi, mi, ci in zip(z, m, c)]


def test_param_count_and_bounds():
    p = init_params(0)
    assert p.size == 162
    assert np.all(np.abs(p["beta_1"]) <= math.sqrt(6 / 14))
    assert np.all(p["beta_1_b"] == 0)
    assert init_params(0).equals(init_params(0))
    assert not init_params(0).equals(init_params(1))


def test_embed_examples():
    cfg = ModelConfig()
    zero = ModelParams({k: np.zeros_like(v) for k, v in init_params(0).arrays.items()})
    X = np.random.default_rng(0).normal(size=(4, 11))
    _, s = slots_for(zero)
    assert not bimodal_embed(s, cfg, X, [1, 2, 1, 2]).value.any()

    p = random_params(3)
    _, s = slots_for(p)
    base = bimodal_embed(s, cfg, X, [1, 2, 1, 2]).value
    q = p.copy()
    q.arrays["beta_2"] += 5.0
    _, s = slots_for(q)
    moved = bimodal_embed(s, cfg, X, [1, 2, 1, 2]).value
    assert np.array_equal(base[[0, 2]], moved[[0, 2]]) and not np.array_equal(base[1], moved[1])

    sel = zero.copy()
    sel.arrays["beta_1"][:, :3] = np.eye(3)
    _, s = slots_for(sel)
    x = np.array([[7.0, 8.0, 9.0] + [1.0] * 8])
    assert bimodal_embed(s, cfg, x, [1]).value.tolist() == [[7.0, 8.0, 9.0]]
    with pytest.raises(ValueError):
        bimodal_embed(s, cfg, x, [3])


def test_attention_examples():
    p = random_params(1)
    _, s = slots_for(p)
    iso = Neighborhoods.from_lists([[0]])
    M = np.array([[0.3, -1.0, 2.0]])
    h = attention_step(s, s["attn_W"].tape.const(M), iso).value
    assert np.array_equal(h[0], p["attn_W"] @ M[0])

    pair = Neighborhoods.from_graph(build_graph(["a", "b"], [("a", "b")]), 1)
    trace = []
    M2 = np.array([[0.5, 0.1, -0.3]] * 2)
    h2 = attention_step(s, s["attn_W"].tape.const(M2), pair, trace).value
    assert np.allclose(trace[0], 0.5, atol=1e-15)
    assert np.array_equal(h2[0], h2[1])

    star = build_graph(["c", "l1", "l2"], [("c", "l1"), ("c", "l2")])
    sets = neighborhood_sets(star, 1, include_self=True)
    M3 = np.random.default_rng(2).normal(size=(3, 3))
    got = attention_step(s, s["attn_W"].tape.const(M3), Neighborhoods.from_lists(sets)).value
    assert np.allclose(got, oracle_attention(p.arrays, M3.tolist(), [x.tolist() for x in sets]), atol=1e-12)


def test_gru_examples():
    zero = ModelParams({k: np.zeros_like(v) for k, v in init_params(0).arrays.items()})
    t, s = slots_for(zero)
    M = np.array([[1.0, -2.0, 0.5]])
    H = np.array([[0.3, 0.3, 0.3]])
    assert np.array_equal(gru_step(s, t.const(M), t.const(H)).value, 0.5 * M)

    sat = random_params(4)
    sat.arrays["b_z"][:] = 20.0
    t, s = slots_for(sat)
    out = gru_step(s, t.const(M), t.const(H)).value
    assert np.allclose(out[0], oracle_gru(sat.arrays, M[0], H[0]), atol=1e-12)
    r = 1 / (1 + np.exp(-(sat["W_r"] @ H[0] + sat["U_r"] @ M[0] + sat["b_r"])))
    cand = np.tanh(sat["W_h"] @ H[0] + sat["U_h"] @ (r * M[0]) + sat["b_h"])
    assert np.allclose(out[0], cand, atol=1e-6)

    p = random_params(7)
    t, s = slots_for(p)
    m1, h1 = np.random.default_rng(8).normal(size=(2, 3))
    assert np.allclose(gru_step(s, t.const(m1[None]), t.const(h1[None])).value[0],
                       oracle_gru(p.arrays, m1, h1), atol=1e-12)


def test_forward_shape_and_single_layer_oracle():
    g = grid_graph(3, 3)
    X = np.random.default_rng(0).normal(size=(9, 11))
    labels = np.where(np.arange(9) % 2, 1, 2)
    p = random_params(5)
    assert forward(p, ModelConfig(), X, labels, g).shape == (9, 3)
    cfg = ModelConfig(bimodal=False, gru=False, kmax=1, neighborhood_order=1)
    got = forward(p, cfg, X, labels, g)
    M0 = X @ p["beta_1"].T + p["beta_1_b"]
    sets = [s.tolist() for s in neighborhood_sets(g, 1, include_self=True)]
    H = np.array(oracle_attention(p.arrays, M0.tolist(), sets))
    expect = np.where(H > 0, H, 0.2 * H) @ p["readout_W"].T + p["readout_b"]
    assert np.allclose(got, expect, atol=1e-12)


def test_forward_kmax_validation():
    with pytest.raises(ValueError):
        ModelConfig(kmax=0)


def test_permutation_equivariance():
    rng = np.random.default_rng(3)
    g = random_graph(rng, 12, 0.3)
    X = rng.normal(size=(12, 11))
    labels = rng.integers(1, 3, 12)
    p = random_params(2)
    cfg = ModelConfig(neighborhood_order=2)
    out = forward(p, cfg, X, labels, g)
    perm = rng.permutation(12)
    inv = np.argsort(perm)
    # relabel nodes with fresh ids whose lexicographic order is the permutation
    new_ids = [f"{int(inv[i]):05d}" for i in range(12)]
    g2 = build_graph(new_ids, [(new_ids[g.index(a)], new_ids[g.index(b)]) for a, b in g.edges()])
    out2 = forward(p, cfg, X[perm], labels[perm], g2)
    assert np.allclose(out2, out[perm], atol=1e-12)


def test_gat_variant_ignores_cluster_labels():
    rng = np.random.default_rng(1)
    g = grid_graph(4, 4)
    X = rng.normal(size=(16, 11))
    p = random_params(9)
    cfg = ModelConfig.variant("gat")
    a = forward(p, cfg, X, rng.integers(1, 3, 16), g)
    b = forward(p, cfg, X, rng.integers(1, 3, 16), g)
    assert np.array_equal(a, b)


def test_variant_semantics():
    gat, bigat, biggat = (ModelConfig.variant(v, neighborhood_order=3) for v in ("gat", "bigat", "biggat"))
    assert (gat.bimodal, gat.gru, gat.neighborhood_order) == (False, False, 1)
    assert (bigat.bimodal, bigat.gru, bigat.neighborhood_order) == (True, False, 1)
    assert (biggat.bimodal, biggat.gru, biggat.neighborhood_order) == (True, True, 3)
    with pytest.raises(ValueError):
        ModelConfig.variant("xgb")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_attention_weights_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 10, 0.25)
    X = rng.normal(size=(10, 11)) * 3
    _, trace = forward(random_params(seed % 1000), ModelConfig(neighborhood_order=2), X,
                       rng.integers(1, 3, 10), g, return_attention=True)
    nb = Neighborhoods.from_graph(g, 2)
    for alpha in trace:
        assert np.allclose(np.bincount(nb.center, weights=alpha), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gru_output_bound(seed):
    rng = np.random.default_rng(seed)
    p = random_params(seed % 1000, scale=3.0)
    t, s = slots_for(p)
    M = rng.normal(scale=2, size=(6, 3))
    out = gru_step(s, t.const(M), t.const(rng.normal(scale=2, size=(6, 3)))).value
    assert np.all(np.abs(out) <= np.maximum(np.abs(M), 1.0) + 1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_locality(seed):
    rng = np.random.default_rng(seed)
    g = grid_graph(7, 7)
    cfg = ModelConfig(kmax=2, neighborhood_order=1)
    X = rng.normal(size=(g.N, 11))
    labels = rng.integers(1, 3, g.N)
    p = random_params(seed)
    v = 0
    d = g.distance_matrix()[v]
    far = np.flatnonzero(d > cfg.kmax * cfg.neighborhood_order)
    X2 = X.copy()
    X2[far] += rng.normal(size=(len(far), 11)) * 10
    assert np.array_equal(forward(p, cfg, X, labels, g)[v], forward(p, cfg, X2, labels, g)[v])
    near = np.flatnonzero(d == cfg.kmax * cfg.neighborhood_order)
    X3 = X.copy()
    X3[near] += 1.0
    assert not np.array_equal(forward(p, cfg, X, labels, g)[v], forward(p, cfg, X3, labels, g)[v])


def test_json_round_trip_bit_exact():
    p = random_params(11)
    cfg = ModelConfig(neighborhood_order=3)
    q, cfg2 = params_from_json(params_to_json(p, cfg))
    assert cfg2 == cfg
    assert q.equals(p)
    assert all(q[k].tobytes() == p[k].tobytes() for k in p.arrays)


def test_full_loss_gradient_check():
    rng = np.random.default_rng(0)
    g = random_graph(rng, 10, 0.3)
    X = rng.normal(size=(10, 11))
    labels = np.array([1, 2] * 5)
    y = rng.integers(0, 3, 10)
    cfg = ModelConfig(neighborhood_order=2)
    nb = Neighborhoods.from_graph(g, 2)
    p = random_params(1)
    _, grads = loss_and_grad(p, cfg, X, labels, y, nb)
    f = lambda arrs: loss_value(ModelParams(arrs), cfg, X, labels, y, nb)
    assert ad.finite_diff_check(f, p.arrays, grads) < 1e-4
