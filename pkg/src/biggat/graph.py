"""County graphs and hop-order neighborhoods."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

UNREACHABLE = -1


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted graph over ordered county identifiers.

    ``node_ids`` is sorted lexicographically at construction, so the row
    order of every derived matrix is reproducible.
    """

    node_ids: tuple[str, ...]
    adjacency: np.ndarray
    _distances: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] != len(self.node_ids):
            raise GraphError("adjacency must be N x N with N = len(node_ids)")
        if not np.array_equal(a, a.T):
            raise GraphError("adjacency is not symmetric")
        if np.any(np.diag(a) != 0):
            raise GraphError("adjacency has nonzero diagonal")
        if not np.all((a == 0) | (a == 1)):
            raise GraphError("adjacency entries must be 0 or 1")
        a.setflags(write=False)

    @property
    def N(self) -> int:
        return len(self.node_ids)

    def index(self, node_id: str) -> int:
        try:
            return self._index_map()[node_id]
        except KeyError:
            raise GraphError(f"unknown node id {node_id!r}") from None

    def _index_map(self) -> dict[str, int]:
        if "index" not in self._distances:
            self._distances["index"] = {nid: i for i, nid in enumerate(self.node_ids)}
        return self._distances["index"]

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def edges(self) -> list[tuple[str, str]]:
        rows, cols = np.nonzero(np.triu(self.adjacency))
        return [(self.node_ids[r], self.node_ids[c]) for r, c in zip(rows, cols)]

    def distance_matrix(self) -> np.ndarray:
        """All-pairs BFS distances; unreachable pairs hold ``UNREACHABLE``."""
        if "all" not in self._distances:
            d = np.stack([shortest_path_distances(self, s) for s in range(self.N)]) if self.N else np.zeros((0, 0), int)
            d.setflags(write=False)
            self._distances["all"] = d
        return self._distances["all"]

    def subgraph(self, node_ids: Iterable[str]) -> "Graph":
        keep = sorted(set(node_ids))
        idx = [self.index(n) for n in keep]
        return Graph(tuple(keep), self.adjacency[np.ix_(idx, idx)].copy())


@dataclass(frozen=True, eq=False)
class HopMatrix:
    order: int
    matrix: np.ndarray
    base: Graph

    def __post_init__(self):
        self.matrix.setflags(write=False)


def build_graph(node_ids: Sequence[str], edges: Iterable[tuple[str, str]]) -> Graph:
    """Build a graph from identifiers and undirected edge pairs.

    Raises ``GraphError`` on duplicate identifiers, self-loops, or edges
    that mention an identifier not in ``node_ids``.
    """
    ids = [str(n) for n in node_ids]
    if not ids:
        raise GraphError("node_ids is empty")
    if len(set(ids)) != len(ids):
        seen, dup = set(), None
        for n in ids:
            if n in seen:
                dup = n
                break
            seen.add(n)
        raise GraphError(f"duplicate node id {dup!r}")
    ordered = tuple(sorted(ids))
    pos = {n: i for i, n in enumerate(ordered)}
    adj = np.zeros((len(ordered), len(ordered)), dtype=np.int8)
    for a, b in edges:
        a, b = str(a), str(b)
        if a == b:
            raise GraphError(f"self-loop on {a!r}")
        if a not in pos or b not in pos:
            missing = a if a not in pos else b
            raise GraphError(f"edge references unknown id {missing!r}")
        adj[pos[a], pos[b]] = 1
        adj[pos[b], pos[a]] = 1
    return Graph(ordered, adj)


def shortest_path_distances(g: Graph, source: int) -> np.ndarray:
    """BFS hop distances from ``source``; unreachable nodes get ``UNREACHABLE``."""
    if not 0 <= source < g.N:
        raise IndexError(f"source {source} out of range for {g.N} nodes")
    dist = np.full(g.N, UNREACHABLE, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    adj = g.adjacency
    while queue:
        u = queue.popleft()
        for w in np.flatnonzero(adj[u]):
            if dist[w] == UNREACHABLE:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def hop_adjacency(g: Graph, n: int) -> HopMatrix:
    """Indicator of node pairs whose shortest-path distance is exactly ``n``."""
    if n < 1:
        raise GraphError(f"hop order must be >= 1, got {n}")
    m = (g.distance_matrix() == n).astype(np.int8)
    return HopMatrix(n, m, g)


def neighborhood_sets(g: Graph, n: int, include_self: bool = False) -> list[np.ndarray]:
    """Per-node sorted index arrays of nodes within ``n`` hops."""
    if n < 1:
        raise GraphError(f"hop order must be >= 1, got {n}")
    d = g.distance_matrix()
    within = (d >= 1) & (d <= n)
    if include_self:
        within |= np.eye(g.N, dtype=bool)
    return [np.flatnonzero(row) for row in within]


def grid_graph(rows: int, cols: int, origin: tuple[int, int] = (0, 0),
               fmt: str = "{r:02d}{c:03d}") -> Graph:
    """Rook-adjacency lattice; ids are zero-padded so lexicographic == row-major."""
    r0, c0 = origin
    ids = [fmt.format(r=r0 + r, c=c0 + c) for r in range(rows) for c in range(cols)]
    edges = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append((ids[r * cols + c], ids[r * cols + c + 1]))
            if r + 1 < rows:
                edges.append((ids[r * cols + c], ids[(r + 1) * cols + c]))
    return build_graph(ids, edges)
