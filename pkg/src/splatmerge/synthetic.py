"""Seeded synthetic scenes for tests, benchmarks and ``verify``."""

from __future__ import annotations

import numpy as np

from .splat_model import SH_FEATURE_COUNTS, SplatSet


def random_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q * np.where(q[:, :1] < 0, -1.0, 1.0)


def cluster_scene(n: int, clusters: int = 20, seed: int = 0, sh_degree: int = 0, extent: float = 10.0) -> SplatSet:
    """``n`` splats drawn around ``clusters`` Gaussian blobs.

    About 5% of the splats are low-opacity floaters scattered over the whole
    box, so the opacity filter has something to do.
    """
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-extent, extent, (clusters, 3))
    spread = rng.uniform(0.3, 1.5, clusters)
    label = rng.integers(0, clusters, n)
    mu = centers[label] + rng.standard_normal((n, 3)) * spread[label, None]
    scale = np.exp(rng.uniform(-4.0, -1.5, (n, 3)))
    alpha = rng.uniform(0.05, 1.0, n)
    floater = rng.random(n) < 0.05
    mu[floater] = rng.uniform(-extent, extent, (int(floater.sum()), 3))
    alpha[floater] = rng.uniform(0.0, 0.01, int(floater.sum()))
    base = rng.standard_normal((clusters, 3)) * 0.5
    features = np.zeros((n, SH_FEATURE_COUNTS[sh_degree]))
    features[:, :3] = base[label] + 0.1 * rng.standard_normal((n, 3))
    features[:, 3:] = 0.05 * rng.standard_normal((n, features.shape[1] - 3))
    return SplatSet(mu, scale, random_quaternions(rng, n), alpha, features)


def random_splat_pairs(rng: np.random.Generator, n: int, sh_degree: int = 0, separation: float = 2.0):
    """Two ``SplatSet``s of ``n`` rows each, row i forming a candidate pair."""

    def one(offset):
        mu = rng.standard_normal((n, 3)) * separation + offset
        scale = np.exp(rng.uniform(-1.5, 0.5, (n, 3)))
        alpha = rng.uniform(0.01, 1.0, n)
        f = rng.standard_normal((n, SH_FEATURE_COUNTS[sh_degree]))
        return SplatSet(mu, scale, random_quaternions(rng, n), alpha, f)

    return one(0.0), one(0.0)
