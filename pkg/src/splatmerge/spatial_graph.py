"""Exact k-nearest-neighbour candidate graph over splat centres.

Distances are squared Euclidean, computed as ``dx*dx + dy*dy + dz*dz`` in
float64, and ties are broken by the lower index. A kd-tree only proposes
candidates; the final ranking is always recomputed with that canonical
formula so results agree bit-for-bit with the exhaustive reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import NothingToPairError

# extra candidates fetched beyond k so boundary ties can usually be settled
# without a radius query
_SLACK = 2
_REL_MARGIN = 1e-9


@dataclass
class MergeGraph:
    node_count: int
    edges: np.ndarray  # (E, 2) int64, i < j, lexicographically sorted
    costs: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.edges)


def effective_k(k: int, n: int) -> int:
    return min(max(1, k), n - 1)


def _sq_dist(centers: np.ndarray, rows: np.ndarray, cand: np.ndarray) -> np.ndarray:
    d = centers[cand] - centers[rows][:, None, :]
    d = d * d
    return d[..., 0] + d[..., 1] + d[..., 2]


def _rank(d2: np.ndarray, cand: np.ndarray, k: int) -> np.ndarray:
    """Per row, keep the k candidates with the smallest (d2, index)."""
    by_idx = np.argsort(cand, axis=1, kind="stable")
    cand = np.take_along_axis(cand, by_idx, axis=1)
    d2 = np.take_along_axis(d2, by_idx, axis=1)
    by_d = np.argsort(d2, axis=1, kind="stable")
    return np.take_along_axis(cand, by_d, axis=1)[:, :k]


def knn(centers: np.ndarray, k_eff: int, workers: int = 1) -> np.ndarray:
    """(N, k_eff) neighbour indices: each row the k_eff nearest other nodes,
    nearest first."""
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    n = len(centers)
    if n < 2:
        raise NothingToPairError("nothing to pair")
    if not 1 <= k_eff <= n - 1:
        raise ValueError(f"k_eff={k_eff} outside [1, {n - 1}]")
    m = min(n, k_eff + 1 + _SLACK)
    tree = cKDTree(centers, balanced_tree=True, compact_nodes=True)
    _, cand = tree.query(centers, k=m, workers=workers)
    cand = cand.reshape(n, m).astype(np.int64)
    rows = np.arange(n)

    d2 = _sq_dist(centers, rows, cand)
    # self can be displaced by exact duplicates; drop it wherever it appears
    is_self = cand == rows[:, None]
    d2 = np.where(is_self, np.inf, d2)
    out = _rank(d2, np.where(is_self, n, cand), k_eff)

    if m < n:
        # Rows whose k-th distance is not strictly below the farthest fetched
        # candidate may have tied or near-tied points that the tree never
        # returned; settle those with a radius query.
        kth = np.take_along_axis(d2, np.argsort(d2, axis=1, kind="stable"), axis=1)[:, k_eff - 1]
        far = np.max(np.where(is_self, -np.inf, d2), axis=1)
        suspect = np.nonzero(far <= kth * (1 + _REL_MARGIN) + 1e-300)[0]
        for i in suspect:
            radius = np.sqrt(kth[i]) * (1 + _REL_MARGIN) + 1e-150
            ball = np.asarray(tree.query_ball_point(centers[i], radius), dtype=np.int64)
            ball = ball[ball != i]
            bd = _sq_dist(centers, np.array([i]), ball[None, :])[0]
            out[i] = _rank(bd[None, :], ball[None, :], k_eff)[0]
    return out


def undirected_union_edges(nbr: np.ndarray, node_count: int | None = None) -> MergeGraph:
    """Unique sorted (i, j), i < j, for every directed neighbour relation."""
    nbr = np.asarray(nbr, dtype=np.int64)
    n = len(nbr) if node_count is None else node_count
    if nbr.size == 0:
        return MergeGraph(n, np.zeros((0, 2), dtype=np.int64))
    src = np.repeat(np.arange(len(nbr), dtype=np.int64), nbr.shape[1])
    dst = nbr.reshape(-1)
    keep = src != dst
    lo = np.minimum(src, dst)[keep]
    hi = np.maximum(src, dst)[keep]
    keys = np.unique(lo * n + hi)
    edges = np.stack([keys // n, keys % n], axis=1)
    return MergeGraph(n, edges)


def build_graph(centers: np.ndarray, k: int, workers: int = 1) -> MergeGraph:
    n = len(centers)
    return undirected_union_edges(knn(centers, effective_k(k, n), workers=workers), n)
