"""Finite-difference gate on the full model loss over a small random graph."""

from __future__ import annotations

import numpy as np

from biggat import autodiff as ad
from biggat.graph import build_graph
from biggat.model import ModelConfig, ModelParams, Neighborhoods, init_params, loss_and_grad, loss_value


def gate_problem(seed: int, n_nodes: int = 10, edge_p: float = 0.3):
    """Random graph, features, cluster labels and targets; shared with the tests."""
    rng = np.random.default_rng([seed, 31337])
    ids = [f"{i:05d}" for i in range(n_nodes)]
    edges = [(ids[i], ids[j]) for i in range(n_nodes) for j in range(i + 1, n_nodes) if rng.random() < edge_p]
    # a path keeps every node reachable so every parameter is exercised
    edges += [(ids[i], ids[i + 1]) for i in range(n_nodes - 1) if (ids[i], ids[i + 1]) not in edges]
    g = build_graph(ids, edges)
    X = rng.normal(size=(n_nodes, 11))
    clusters = np.tile([1, 2], n_nodes // 2 + 1)[:n_nodes]
    targets = rng.integers(0, 3, n_nodes)
    return g, X, clusters, targets, rng


def gradient_gate(seed: int = 0, config: ModelConfig | None = None, order: int = 2) -> tuple[float, int]:
    """Max relative error between tape gradients and central differences, and the parameter count."""
    config = config or ModelConfig()
    g, X, clusters, targets, rng = gate_problem(seed)
    nbhd = Neighborhoods.from_graph(g, order if config.uses_data_order else config.neighborhood_order)
    base = init_params(seed, config)
    # nonzero biases so their gradients are not trivially symmetric
    params = ModelParams({k: v + 0.1 * rng.normal(size=v.shape) for k, v in base.arrays.items()})
    _, grads = loss_and_grad(params, config, X, clusters, targets, nbhd)
    err = ad.finite_diff_check(lambda arrs: loss_value(ModelParams(arrs), config, X, clusters, targets, nbhd),
                               params.arrays, grads)
    return float(err), params.size
