"""Brute-force references for the engine.

Nothing here imports the engine's density, moment, neighbour or matching
code: densities come from ``scipy.stats``, sampling from numpy Cholesky
draws, neighbours from a full distance scan, and the greedy matching from a
repeated minimum search. The exhaustive routines refuse inputs past their
size caps so they cannot be pointed at a real asset by accident.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .errors import OracleSizeError

KNN_CAP = 2000
MATCHING_CAP = 10_000


@dataclass
class OracleConfig:
    oracle_samples: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        if self.oracle_samples < 10_000:
            raise ValueError("oracle_samples must be >= 1e4")


def gaussian_kl(mu_i, cov_i, mu_j, cov_j) -> float:
    """Textbook KL(N_i || N_j) in three dimensions."""
    mu_i, mu_j = np.asarray(mu_i, float), np.asarray(mu_j, float)
    cov_i, cov_j = np.asarray(cov_i, float), np.asarray(cov_j, float)
    inv_j = np.linalg.inv(cov_j)
    diff = mu_j - mu_i
    _, ld_i = np.linalg.slogdet(cov_i)
    _, ld_j = np.linalg.slogdet(cov_j)
    return 0.5 * (np.trace(inv_j @ cov_i) + diff @ inv_j @ diff - 3 + ld_j - ld_i)


def mixture_moments(pi, mu_a, cov_a, mu_b, cov_b):
    """Mean and covariance of pi N_a + (1 - pi) N_b via the law of total covariance."""
    mu_a, mu_b = np.asarray(mu_a, float), np.asarray(mu_b, float)
    cov_a, cov_b = np.asarray(cov_a, float), np.asarray(cov_b, float)
    mean = pi * mu_a + (1 - pi) * mu_b
    da = mu_a - mean
    db = mu_b - mean
    within = pi * cov_a + (1 - pi) * cov_b
    between = pi * np.outer(da, da) + (1 - pi) * np.outer(db, db)
    return mean, within + between


def _mixture_logpdf(x, pi, mu_a, cov_a, mu_b, cov_b):
    la = stats.multivariate_normal(mu_a, cov_a).logpdf(x)
    if np.array_equal(mu_a, mu_b) and np.array_equal(cov_a, cov_b):
        return la
    lb = stats.multivariate_normal(mu_b, cov_b).logpdf(x)
    return logsumexp(np.stack([la, lb]), axis=0, b=np.array([[pi], [1 - pi]]))


def mc_kl_oracle(pi, mu_a, cov_a, mu_b, cov_b, mu_q, cov_q, n: int = 1_000_000, seed: int = 0):
    """Plain Monte-Carlo KL(pi N_a + (1 - pi) N_b || N_q).

    Returns ``(estimate, standard_error)`` of the per-sample log-ratio mean.
    """
    if n < 10_000:
        raise ValueError("oracle needs at least 1e4 samples")
    mu_a, mu_b, mu_q = (np.asarray(m, float) for m in (mu_a, mu_b, mu_q))
    cov_a, cov_b, cov_q = (np.asarray(c, float) for c in (cov_a, cov_b, cov_q))
    rng = np.random.default_rng(seed)
    n_a = rng.binomial(n, pi)
    xa = mu_a + rng.standard_normal((n_a, 3)) @ np.linalg.cholesky(cov_a).T
    xb = mu_b + rng.standard_normal((n - n_a, 3)) @ np.linalg.cholesky(cov_b).T
    x = np.concatenate([xa, xb])
    ratio = _mixture_logpdf(x, pi, mu_a, cov_a, mu_b, cov_b) - stats.multivariate_normal(mu_q, cov_q).logpdf(x)
    return float(ratio.mean()), float(ratio.std(ddof=1) / np.sqrt(n))


def exhaustive_knn(centers, k: int) -> np.ndarray:
    """O(N^2) k nearest neighbours; ties go to the lower index."""
    centers = np.asarray(centers, dtype=np.float64)
    n = len(centers)
    if n > KNN_CAP:
        raise OracleSizeError(f"exhaustive_knn capped at {KNN_CAP} points, got {n}")
    out = np.empty((n, k), dtype=np.int64)
    idx = np.arange(n)
    for i in range(n):
        d = (centers - centers[i]) ** 2
        d2 = d[:, 0] + d[:, 1] + d[:, 2]
        order = np.lexsort((idx, d2))
        order = order[order != i]
        out[i] = order[:k]
    return out


def exhaustive_greedy_matching(edges, costs, max_pairs: int | None = None) -> list[tuple[int, int]]:
    """Repeatedly take the cheapest edge (cost, i, j) with both endpoints free."""
    edges = [tuple(int(v) for v in e) for e in np.asarray(edges).reshape(-1, 2)]
    costs = [float(c) for c in costs]
    if len(edges) > MATCHING_CAP:
        raise OracleSizeError(f"exhaustive matching capped at {MATCHING_CAP} edges, got {len(edges)}")
    limit = len(edges) if max_pairs is None else max_pairs
    live = [(c, i, j) for (i, j), c in zip(edges, costs) if np.isfinite(c)]
    used: set[int] = set()
    picked = []
    while live and len(picked) < limit:
        best = min(live)
        picked.append((best[1], best[2]))
        used.update(best[1:])
        live = [e for e in live if e[1] not in used and e[2] not in used]
    return picked
