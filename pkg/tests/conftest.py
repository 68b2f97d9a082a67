import numpy as np
import pytest

from biggat.graph import build_graph


def random_graph(rng, n, p=0.2):
    ids = [f"{i:05d}" for i in range(n)]
    edges = [(ids[i], ids[j]) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return build_graph(ids, edges)


def floyd_warshall(adj):
    """Independent all-pairs distance oracle; -1 where unreachable."""
    n = len(adj)
    inf = 10**9
    d = np.where(adj > 0, 1, inf).astype(np.int64)
    np.fill_diagonal(d, 0)
    for k in range(n):
        d = np.minimum(d, d[:, [k]] + d[[k], :])
    d[d >= inf] = -1
    return d


@pytest.fixture
def path3():
    return build_graph(["A", "B", "C"], [("A", "B"), ("B", "C")])


@pytest.fixture
def triangle():
    return build_graph(["A", "B", "C"], [("A", "B"), ("B", "C"), ("A", "C")])


@pytest.fixture
def cycle4():
    return build_graph(["A", "B", "C", "D"], [("A", "B"), ("B", "C"), ("C", "D"), ("D", "A")])
