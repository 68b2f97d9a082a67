import math

import numpy as np
import pytest

from biggat.graph import grid_graph
from biggat.metrics import (MetricsReport, average_report, confusion_matrix, format_table,
                            predict_classes, scores_from_confusion)
from biggat.model import ModelConfig, Neighborhoods, init_params
from biggat.training import (AdamState, TrainConfig, TrainingBatch, TrainingError, adam_step,
                             cross_entropy_loss, inverse_frequency_weights, train)


def test_cross_entropy_examples():
    assert cross_entropy_loss(np.full((4, 3), 2.5), [0, 1, 2, 0]) == pytest.approx(math.log(3), abs=1e-12)
    assert cross_entropy_loss(np.array([[30.0, 0, 0], [0, 0, 30.0]]), [0, 2]) < 1e-9
    assert cross_entropy_loss(np.array([[1.0, 0, 0]]), [0]) == pytest.approx(-math.log(math.e / (math.e + 2)), abs=1e-12)
    assert cross_entropy_loss(np.array([[1.0, 0, 0]]), [0]) == pytest.approx(0.5514, abs=1e-4)
    assert cross_entropy_loss(np.array([[1000.0, -1000, 0]]), [1]) == pytest.approx(2000)
    with pytest.raises(ValueError):
        cross_entropy_loss(np.zeros((1, 3)), [3])


def test_class_weights():
    w = inverse_frequency_weights([0, 0, 0, 1])
    assert w.tolist() == pytest.approx([0.5, 1.5, 0.0])
    logits = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    plain = cross_entropy_loss(logits, [0, 1])
    assert cross_entropy_loss(logits, [0, 1], np.ones(3)) == pytest.approx(plain)


def params_like(seed=0):
    return init_params(seed)


def test_adam_identity_on_zero_gradient():
    p = params_like()
    zero = {k: np.zeros_like(v) for k, v in p.arrays.items()}
    q, st = adam_step(p, zero, AdamState(), TrainConfig())
    assert q.equals(p) and st.t == 1


def test_adam_first_step_is_lr_sign():
    p = params_like()
    rng = np.random.default_rng(0)
    g = {k: rng.normal(size=v.shape) for k, v in p.arrays.items()}
    cfg = TrainConfig(learning_rate=0.01)
    q, _ = adam_step(p, g, AdamState(), cfg)
    for k in p.arrays:
        assert np.allclose(p[k] - q[k], 0.01 * np.sign(g[k]), atol=1e-6)


def test_adam_weight_decay_and_errors():
    p = params_like()
    zero = {k: np.zeros_like(v) for k, v in p.arrays.items()}
    q, _ = adam_step(p, zero, AdamState(), TrainConfig(learning_rate=0.1, weight_decay=0.5))
    assert np.allclose(q["beta_1"], 0.95 * p["beta_1"])
    bad = dict(zero, attn_a=np.full(6, np.nan))
    with pytest.raises(TrainingError, match="attn_a"):
        adam_step(p, bad, AdamState(), TrainConfig())


def test_adam_deterministic():
    def run():
        p, st = params_like(), AdamState()
        for i in range(10):
            rng = np.random.default_rng(i)
            p, st = adam_step(p, {k: rng.normal(size=v.shape) for k, v in p.arrays.items()}, st, TrainConfig())
        return p
    a, b = run(), run()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a.arrays)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)


def separable_batch(seed, n_side=5):
    rng = np.random.default_rng(seed)
    g = grid_graph(n_side, n_side)
    y = rng.integers(0, 3, g.N)
    X = rng.normal(scale=0.1, size=(g.N, 11))
    X[:, 0] += 3.0 * (y - 1)
    X[:, 1] += 3.0 * (y == 1)
    X[:, 7:] = np.eye(4)[rng.integers(0, 4, g.N)]
    clusters = np.where(y == 2, 1, 2)
    return TrainingBatch(f"e{seed}", X, clusters, y, Neighborhoods.from_graph(g, 1))


def test_train_zero_lr_keeps_init():
    cfg = ModelConfig()
    res = train([separable_batch(0)], cfg, TrainConfig(learning_rate=0.0, epochs=3, seed=4))
    assert res.params.equals(init_params(4, cfg))
    assert len(res.loss_history) == 3


def test_train_step_accounting():
    batches = [separable_batch(s) for s in range(3)]
    assert train(batches[:1], ModelConfig(), TrainConfig(epochs=1)).n_steps == 1
    assert train(batches, ModelConfig(), TrainConfig(epochs=2)).n_steps == 6
    with pytest.raises(TrainingError):
        train([], ModelConfig(), TrainConfig())


def test_train_separable_reaches_low_loss():
    batches = [separable_batch(s) for s in range(2)]
    res = train(batches, ModelConfig(), TrainConfig(epochs=300, learning_rate=0.03))
    assert all(np.isfinite(res.loss_history))
    assert res.loss_history[-1] < 0.1


def test_train_deterministic():
    b = [separable_batch(1)]
    a = train(b, ModelConfig(), TrainConfig(epochs=5, seed=2))
    c = train(b, ModelConfig(), TrainConfig(epochs=5, seed=2))
    assert a.params.equals(c.params) and a.loss_history == c.loss_history


# ---------------------------------------------------------------- metrics

def test_metrics_hand_check():
    r = MetricsReport.from_predictions([0, 0, 1, 2], [0, 1, 1, 2])
    assert r.accuracy == 0.75
    assert r.balanced_accuracy == pytest.approx(5 / 6, abs=1e-15)
    assert r.macro_f1 == pytest.approx(7 / 9, abs=1e-15)
    assert r.confusion.sum() == r.n_nodes == 4


def test_metrics_degenerate():
    r = MetricsReport.from_predictions([1, 1, 1], [1, 1, 1])
    assert (r.accuracy, r.balanced_accuracy, r.macro_f1) == (1.0, 1.0, 1.0)
    r = MetricsReport.from_predictions([0, 1, 2], [0, 1, 2])
    assert (r.accuracy, r.balanced_accuracy, r.macro_f1) == (1.0, 1.0, 1.0)
    r = MetricsReport.from_predictions([0, 0], [1, 1])
    assert r.macro_f1 == 0.0
    with pytest.raises(ValueError):
        MetricsReport.from_predictions([], [])


def naive_balanced(t, p):
    recalls = []
    for c in sorted(set(t)):
        idx = [i for i, v in enumerate(t) if v == c]
        recalls.append(sum(p[i] == c for i in idx) / len(idx))
    return sum(recalls) / len(recalls)


def test_balanced_accuracy_matches_loop():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 40))
        t, p = rng.integers(0, 3, n).tolist(), rng.integers(0, 3, n).tolist()
        _, bal, _ = scores_from_confusion(confusion_matrix(t, p))
        assert bal == pytest.approx(naive_balanced(t, p), abs=1e-12)
    t = [0, 0, 1, 1, 2, 2]
    p = [0, 1, 1, 1, 0, 2]
    acc, bal, _ = scores_from_confusion(confusion_matrix(t, p))
    assert acc == pytest.approx(bal)


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(3)
    t, p = rng.integers(0, 3, 30), rng.integers(0, 3, 30)
    perm = rng.permutation(30)
    a, b = MetricsReport.from_predictions(t, p), MetricsReport.from_predictions(t[perm], p[perm])
    assert (a.accuracy, a.balanced_accuracy, a.macro_f1) == (b.accuracy, b.balanced_accuracy, b.macro_f1)


def test_argmax_tie_lowest_class():
    assert predict_classes(np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0], [3.0, 3.0, 3.0]])).tolist() == [0, 1, 0]


def test_average_is_unweighted():
    a = MetricsReport.from_predictions([0] * 10, [0] * 10, "a")
    b = MetricsReport.from_predictions([0, 1], [1, 0], "b")
    avg = average_report([a, b])
    assert avg.accuracy == 0.5 and avg.n_nodes == 12
    assert "present in the true labels" in format_table([a, b, avg])
