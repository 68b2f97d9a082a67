"""Global and n-hop Moran's I with permutation significance."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from biggat.graph import Graph, hop_adjacency

DEFAULT_ALPHA = 0.1
DEFAULT_N_MAX = 6
DEFAULT_N_PERM = 999


class SpatialStatsError(ValueError):
    pass


@dataclass(frozen=True)
class MoranResult:
    statistic: float
    order: int
    z_score: float
    p_value: float
    n_permutations: int
    seed: int

    def significant(self, alpha: float = DEFAULT_ALPHA) -> bool:
        return self.p_value <= alpha and self.statistic > 0


def _check_inputs(values, weights):
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if x.ndim != 1:
        raise SpatialStatsError("values must be one-dimensional")
    if w.shape != (x.size, x.size):
        raise SpatialStatsError(f"weights shape {w.shape} does not match {x.size} values")
    if x.size < 2:
        raise SpatialStatsError("need at least 2 observations")
    if not np.allclose(w, w.T) or np.any(np.diag(w) != 0):
        raise SpatialStatsError("weights must be symmetric with zero diagonal")
    if not w.any():
        raise SpatialStatsError("all-zero weights")
    z = x - x.mean()
    if not np.any(z):
        raise SpatialStatsError("zero variance in values")
    return z, w


def global_morans_i(values, weights) -> float:
    """Moran's I: ``(N / W) * sum_ij w_ij z_i z_j / sum_i z_i**2``."""
    z, w = _check_inputs(values, weights)
    return float(z.size / w.sum() * (z @ w @ z) / (z @ z))


def nhop_morans_i(values, g: Graph, n: int) -> float:
    hop = hop_adjacency(g, n).matrix
    if not hop.any():
        raise SpatialStatsError(f"no {n}-th order pairs in graph")
    return global_morans_i(values, hop)


def permutation_significance(values, g: Graph, n: int, n_perm: int = DEFAULT_N_PERM,
                             seed: int = 0) -> MoranResult:
    """One-sided (upper tail) permutation test for n-hop Moran's I.

    The z-score is taken against the permutation distribution. When every
    permutation gives the same statistic the z-score is NaN and a warning
    is emitted; the p-value is still returned.
    """
    if n_perm < 99:
        raise SpatialStatsError("n_perm must be >= 99")
    hop = hop_adjacency(g, n).matrix
    if not hop.any():
        raise SpatialStatsError(f"no {n}-th order pairs in graph")
    observed = global_morans_i(values, hop)
    z = np.asarray(values, dtype=float)
    z = z - z.mean()
    w = hop.astype(float)
    rng = np.random.default_rng(seed)
    perms = rng.permuted(np.tile(z, (n_perm, 1)), axis=1)
    # z'Wz per row; z'z is permutation invariant
    stats = z.size / w.sum() * np.einsum("pi,pi->p", perms @ w, perms) / (z @ z)
    p_value = (1 + int(np.sum(stats >= observed))) / (n_perm + 1)
    sd = stats.std(ddof=1)
    if sd == 0 or not np.isfinite(sd):
        warnings.warn(f"zero permutation variance at order {n}; z-score undefined", RuntimeWarning)
        z_score = float("nan")
    else:
        z_score = float((observed - stats.mean()) / sd)
    return MoranResult(observed, n, z_score, p_value, n_perm, seed)


def moran_table(values, g: Graph, n_max: int = DEFAULT_N_MAX, n_perm: int = DEFAULT_N_PERM,
                seed: int = 0) -> list[MoranResult]:
    """Permutation results for orders 1..n_max; orders with no pairs are skipped."""
    rows = []
    for n in range(1, n_max + 1):
        if not hop_adjacency(g, n).matrix.any():
            continue
        rows.append(permutation_significance(values, g, n, n_perm, seed + n))
    return rows


def select_neighborhood_order(values, g: Graph, n_max: int = DEFAULT_N_MAX,
                              alpha: float = DEFAULT_ALPHA, n_perm: int = DEFAULT_N_PERM,
                              seed: int = 0, rule: str = "contiguous") -> int:
    """Highest order with significant positive n-hop Moran's I; 1 when none is.

    ``rule="contiguous"`` stops at the first non-significant order, so the
    result is the top of an unbroken run 1..n of significant orders.
    Autocorrelated values produce spurious permutation-test hits at long
    lags; ``rule="largest"`` takes any significant order in 1..n_max anyway.
    """
    if n_max < 1:
        raise SpatialStatsError("n_max must be >= 1")
    if not 0 < alpha < 1:
        raise SpatialStatsError("alpha must lie in (0, 1)")
    if rule not in ("contiguous", "largest"):
        raise SpatialStatsError(f"unknown selection rule {rule!r}")
    best = 1
    expected = 1
    for res in moran_table(values, g, n_max, n_perm, seed):
        if rule == "contiguous" and res.order != expected:
            break
        expected += 1
        if res.significant(alpha):
            best = res.order
        elif rule == "contiguous":
            break
    return best
