"""K-means fixing the bimodal embedding structure.

Training nodes are clustered on ``[wind one-hot | scaled duration class]``.
Unseen nodes are assigned using the wind sub-coordinates only, because the
duration class is what the model predicts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WIND_SLICE = slice(7, 11)
DURATION_SCALE = 0.5
DEFAULT_SEED = 0


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray  # k x 5, rows ordered by cluster label 1..k
    train_assignments: np.ndarray  # labels in 1..k for the fitted nodes
    seed: int
    clustering_dims: tuple[str, ...] = ("wind_none", "wind_ts34", "wind_ts50", "wind_h64", "duration")
    n_wind_dims: int = 4

    @property
    def wind_centroids(self) -> np.ndarray:
        return self.centroids[:, : self.n_wind_dims]


def _nearest(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)  # argmin picks the lowest index on ties


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    uniq = np.unique(points, axis=0)
    centers = [points[rng.integers(len(points))]]
    for _ in range(1, k):
        d2 = ((points[:, None, :] - np.asarray(centers)[None]) ** 2).sum(axis=2).min(axis=1)
        if d2.sum() == 0:
            # every point already sits on a center; pick an unused distinct one
            used = {tuple(c) for c in centers}
            centers.append(next(u for u in uniq if tuple(u) not in used))
            continue
        centers.append(points[rng.choice(len(points), p=d2 / d2.sum())])
    return np.asarray(centers, dtype=float)


def kmeans_fit(points, k: int, seed: int = DEFAULT_SEED, max_iter: int = 100,
               return_history: bool = False):
    """Lloyd's algorithm from k-means++ seeding.

    Returns ``(centroids, assignments, inertia)`` with 0-based assignments,
    plus the per-iteration inertia when ``return_history`` is set.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim != 2:
        raise ClusteringError("points must be a 2-D array")
    if k < 1:
        raise ClusteringError("k must be >= 1")
    if len(np.unique(x, axis=0)) < k:
        raise ClusteringError(f"fewer distinct points than k={k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, k, rng)
    assign = _nearest(x, centroids)
    history = []
    for _ in range(max_iter):
        for j in range(k):
            members = x[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
        history.append(float(((x - centroids[assign]) ** 2).sum()))
        new = _nearest(x, centroids)
        if np.array_equal(new, assign):
            break
        assign = new
    inertia = float(((x - centroids[assign]) ** 2).sum())
    if return_history:
        return centroids, assign, inertia, history
    return centroids, assign, inertia


def clustering_vectors(features, labels) -> np.ndarray:
    feats = np.asarray(features, dtype=float)
    lab = np.asarray(labels, dtype=float)
    return np.column_stack([feats[:, WIND_SLICE], lab * DURATION_SCALE])


def fit_bimodal(train_features, train_labels, seed: int = DEFAULT_SEED, k: int = 2) -> ClusterModel:
    """Fit the embedding clusters; label 1 is the centroid with the largest duration coordinate."""
    pts = clustering_vectors(train_features, train_labels)
    if len(pts) == 0:
        raise ClusteringError("empty training set")
    centroids, assign, _ = kmeans_fit(pts, k, seed)
    # stable sort: descending duration, ties keep k-means index order
    order = np.argsort(-centroids[:, -1], kind="stable")
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(1, k + 1)
    return ClusterModel(k, centroids[order].copy(), relabel[assign], seed)


def assign_cluster(model: ClusterModel | None, x_v) -> int:
    """Cluster label in 1..k for one 11-dim feature vector (wind dims only)."""
    if model is None:
        raise ClusteringError("cluster model is not fitted")
    return int(assign_clusters(model, np.asarray(x_v, dtype=float)[None, :])[0])


def assign_clusters(model: ClusterModel | None, features) -> np.ndarray:
    if model is None:
        raise ClusteringError("cluster model is not fitted")
    wind = np.asarray(features, dtype=float)[:, WIND_SLICE]
    return _nearest(wind, model.wind_centroids) + 1


def flip_fraction(model: ClusterModel, train_features) -> float:
    """Share of fitted nodes whose wind-only assignment differs from their k-means label."""
    inferred = assign_clusters(model, train_features)
    return float(np.mean(inferred != model.train_assignments))
