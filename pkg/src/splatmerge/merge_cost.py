"""Edge scoring: geometric merge distortion plus appearance distance.

The geometric term is KL(p || q) between the normalized two-splat mixture
``p = pi N_a + (1 - pi) N_b`` (``pi`` the mass fraction of ``a``) and its
moment-matched single Gaussian ``q``. It is estimated by Monte Carlo with a
sample bank shared by every edge in a pass (common random numbers), so a
pass's cost array is a deterministic function of the two endpoint splats.

All densities go through the same Cholesky-based log-density routine; that is
what makes an identical pair score exactly zero.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import FeatureMismatchError, MasslessPairError, SingularCovarianceError
from .mpmm import mass_weight, pair_moments, pair_tie_keys, splat_keys
from .spatial_graph import MergeGraph
from .splat_model import EIGEN_FLOOR, Splat, SplatSet, covariance_from_scale_rot, quat_to_rotmat

LOG_2PI = np.log(2.0 * np.pi)
DEFAULT_BLOCK = 1 << 20
# per-kernel working set, in (edge, sample) elements
_CHUNK_ELEMS = 1 << 20
_APP_CHUNK = 1 << 16
_TASK_EDGES = 1 << 16


class CostMode(str, enum.Enum):
    IDIV = "idiv"
    MSE = "mse"


@dataclass
class CostParams:
    sample_count: int = 16
    app_weight: float = 1.0
    cost_mode: CostMode = CostMode.IDIV
    rng_seed: int = 0

    def __post_init__(self):
        self.cost_mode = CostMode(self.cost_mode)
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.app_weight < 0:
            raise ValueError("app_weight must be non-negative")


@dataclass(frozen=True)
class SharedSampleBank:
    z: np.ndarray  # (S, 3) standard normal
    u: np.ndarray  # (S,) uniform [0, 1)

    @classmethod
    def from_seed(cls, seed, sample_count: int) -> "SharedSampleBank":
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((sample_count, 3))
        u = rng.random(sample_count)
        return cls(z, u)

    def __len__(self) -> int:
        return len(self.u)


# --- batched Gaussian log-density --------------------------------------------


def _cholesky(cov: np.ndarray):
    """Closed-form 3x3 Cholesky, returned as separate contiguous factor arrays.

    Pivots are floored at ``1e-12 * trace`` so round-off on nearly flat
    Gaussians cannot produce a NaN.
    """
    c = [[np.ascontiguousarray(cov[:, r, s]) for s in range(3)] for r in range(3)]
    floor = EIGEN_FLOOR * (c[0][0] + c[1][1] + c[2][2]) + 1e-300
    l00 = np.sqrt(np.maximum(c[0][0], floor))
    l10 = c[1][0] / l00
    l20 = c[2][0] / l00
    l11 = np.sqrt(np.maximum(c[1][1] - l10 * l10, floor))
    l21 = (c[2][1] - l20 * l10) / l11
    l22 = np.sqrt(np.maximum(c[2][2] - l20 * l20 - l21 * l21, floor))
    half_logdet = np.log(l00) + np.log(l11) + np.log(l22)
    return (l00, l10, l20, l11, l21, l22), half_logdet


def _log_density(x0, x1, x2, mu, chol, half_logdet):
    """log N(x; mu, L L^T) for x components of shape (n, s)."""
    l00, l10, l20, l11, l21, l22 = (v[:, None] for v in chol)
    d0 = x0 - mu[0][:, None]
    d1 = x1 - mu[1][:, None]
    d2 = x2 - mu[2][:, None]
    y0 = d0 / l00
    y1 = (d1 - l10 * y0) / l11
    y2 = (d2 - l20 * y0 - l21 * y1) / l22
    maha = y0 * y0 + y1 * y1 + y2 * y2
    return -0.5 * maha - half_logdet[:, None] - 1.5 * LOG_2PI


def _cols(a: np.ndarray):
    return [np.ascontiguousarray(a[:, k]) for k in range(a.shape[1])]


def _idiv_kernel(mu_a, cov_a, m_a, w_a, mu_b, cov_b, m_b, w_b, tie_keys, bank: SharedSampleBank):
    """Per-sample log-ratios (n, S) for n pairs; rows of massless pairs are +inf.

    ``m_*`` are the sampling factors R diag(s); ``a`` is the lower-index
    endpoint and the one drawn when ``u < pi_a``.
    """
    n = len(mu_a)
    s_total = len(bank)
    out = np.empty((n, s_total))
    if n == 0:
        return out
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        mom = pair_moments(mu_a, cov_a, w_a, mu_b, cov_b, w_b, tie_keys)
        pb_first = 1.0 - mom.pi_first
        # mixture weights of the (a, b) endpoints, undoing the canonical swap
        pi_a = np.where(mom.swapped, pb_first, mom.pi_first)
        pi_b = np.where(mom.swapped, mom.pi_first, pb_first)
        bad = ~(np.isfinite(mom.total_mass) & (mom.total_mass > 0) & np.all(np.isfinite(mom.cov), axis=(1, 2)))
        if bad.any():
            mom.cov[bad] = np.eye(3)
            mom.mu[bad] = 0.0
            pi_a = np.where(bad, 0.5, pi_a)
            pi_b = np.where(bad, 0.5, pi_b)

        chol_a, hld_a = _cholesky(cov_a)
        chol_b, hld_b = _cholesky(cov_b)
        chol_m, hld_m = _cholesky(mom.cov)
        mua, mub, mum = _cols(mu_a), _cols(mu_b), _cols(mom.mu)
        log_pa = np.log(pi_a)[:, None]
        log_pb = np.log(pi_b)[:, None]

        step = max(1, _CHUNK_ELEMS // n)
        for s0 in range(0, s_total, step):
            z = bank.z[s0 : s0 + step]
            from_a = bank.u[s0 : s0 + step][None, :] < pi_a[:, None]
            x = []
            for r in range(3):
                xa = mu_a[:, r, None] + (m_a[:, r, 0, None] * z[:, 0] + m_a[:, r, 1, None] * z[:, 1] + m_a[:, r, 2, None] * z[:, 2])
                xb = mu_b[:, r, None] + (m_b[:, r, 0, None] * z[:, 0] + m_b[:, r, 1, None] * z[:, 1] + m_b[:, r, 2, None] * z[:, 2])
                x.append(np.where(from_a, xa, xb))
            la = _log_density(*x, mua, chol_a, hld_a)
            lb = _log_density(*x, mub, chol_b, hld_b)
            lm = _log_density(*x, mum, chol_m, hld_m)
            ta = la + log_pa
            tb = lb + log_pb
            top = np.maximum(ta, tb)
            mix = top + np.log(np.exp(ta - top) + np.exp(tb - top))
            # equal component densities: the mixture density is exactly that value
            mix = np.where(la == lb, la, mix)
            out[:, s0 : s0 + step] = mix - lm
        out[bad] = np.inf
    return out


def _sampling_factor(scale, rot):
    return quat_to_rotmat(rot) * np.asarray(scale, dtype=np.float64)[..., None, :]


def _single(s: Splat) -> SplatSet:
    return SplatSet.from_splats([s])


def idiv_log_ratios(a: Splat, b: Splat, bank: SharedSampleBank) -> np.ndarray:
    """The S per-sample log-ratios whose mean is ``geo_cost_idiv``."""
    sa, sb = _single(a), _single(b)
    w_a = mass_weight(sa.alpha, sa.scale)
    w_b = mass_weight(sb.alpha, sb.scale)
    if not (w_a + w_b)[0] > 0:
        raise MasslessPairError("massless pair")
    return _idiv_kernel(
        sa.mu, sa.covariances, _sampling_factor(sa.scale, sa.rot), w_a,
        sb.mu, sb.covariances, _sampling_factor(sb.scale, sb.rot), w_b,
        lambda r: (splat_keys(sa, r), splat_keys(sb, r)),
        bank,
    )[0]


def geo_cost_idiv(a: Splat, b: Splat, bank: SharedSampleBank) -> float:
    """Monte-Carlo KL between the pair's mixture and its merged Gaussian.

    ``a`` is treated as the lower-index endpoint for sampling.
    """
    return float(np.sum(idiv_log_ratios(a, b, bank)) / len(bank))


def geo_cost_mse(a: Splat, b: Splat) -> float:
    d = a.mu - b.mu
    dc = a.covariance - b.covariance
    return float(d @ d + np.sum(dc * dc))


def app_cost(a: Splat, b: Splat, app_weight: float = 1.0) -> float:
    if len(a.features) != len(b.features):
        raise FeatureMismatchError("feature dimension mismatch")
    d = np.asarray(a.features) - np.asarray(b.features)
    return float(app_weight * np.sum(d * d))


# --- closed-form single-Gaussian I-divergence ---------------------------------


def _floored(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if not np.all(np.isfinite(cov)):
        raise SingularCovarianceError("singular covariance")
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    floor = EIGEN_FLOOR * max(np.trace(cov), 1.0)
    if np.all(evals >= floor):
        return cov
    return (evecs * np.maximum(evals, floor)) @ evecs.T


def gaussian_idiv(m_i: float, mu_i, cov_i, m_j: float, mu_j, cov_j) -> float:
    """I-divergence D(m_i N_i || m_j N_j) between two unnormalized Gaussians."""
    if not (m_i > 0 and m_j > 0):
        raise MasslessPairError("masses must be positive")
    cov_i = _floored(cov_i)
    cov_j = _floored(cov_j)
    try:
        lj = np.linalg.cholesky(cov_j)
        li = np.linalg.cholesky(cov_i)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("singular covariance") from exc
    diff = np.asarray(mu_j, dtype=np.float64) - np.asarray(mu_i, dtype=np.float64)
    y = np.linalg.solve(lj, diff)
    a = np.linalg.solve(lj, li)  # Lj^-1 Li, so tr(Sj^-1 Si) = ||A||_F^2
    trace_term = float(np.sum(a * a))
    logdet = 2.0 * (np.sum(np.log(np.diag(lj))) - np.sum(np.log(np.diag(li))))
    kl = 0.5 * (trace_term + float(y @ y) - 3.0 + logdet)
    return m_i * (np.log(m_i / m_j) + kl) - m_i + m_j


def closed_form_idiv(a: Splat, b: Splat) -> float:
    """I-divergence between two splats read as mass-weighted Gaussians."""
    m_a = float(mass_weight(a.alpha, a.scale))
    m_b = float(mass_weight(b.alpha, b.scale))
    return gaussian_idiv(m_a, a.mu, a.covariance, m_b, b.mu, b.covariance)


# --- whole-graph scoring -------------------------------------------------------


@dataclass
class _PassCache:
    """Per-splat quantities shared by every block of one pass."""

    splats: SplatSet
    cov: np.ndarray
    factor: np.ndarray
    mass: np.ndarray

    @classmethod
    def build(cls, splats: SplatSet) -> "_PassCache":
        return cls(
            splats,
            covariance_from_scale_rot(splats.scale, splats.rot),
            _sampling_factor(splats.scale, splats.rot),
            mass_weight(splats.alpha, splats.scale),
        )


def _block_costs(cache: _PassCache, ia, ib, params: CostParams, bank: SharedSampleBank | None) -> np.ndarray:
    s = cache.splats
    app = np.empty(len(ia))
    for c0 in range(0, len(ia), _APP_CHUNK):
        fd = s.features[ia[c0 : c0 + _APP_CHUNK]] - s.features[ib[c0 : c0 + _APP_CHUNK]]
        app[c0 : c0 + _APP_CHUNK] = np.sum(fd * fd, axis=1)
    app *= params.app_weight
    if params.cost_mode is CostMode.MSE:
        d = s.mu[ia] - s.mu[ib]
        dc = (cache.cov[ia] - cache.cov[ib]).reshape(len(ia), 9)
        geo = np.sum(d * d, axis=1) + np.sum(dc * dc, axis=1)
        total = cache.mass[ia] + cache.mass[ib]
        geo = np.where(np.isfinite(total) & (total > 0), geo, np.inf)
    else:
        ratios = _idiv_kernel(
            s.mu[ia], cache.cov[ia], cache.factor[ia], cache.mass[ia],
            s.mu[ib], cache.cov[ib], cache.factor[ib], cache.mass[ib],
            pair_tie_keys(s, ia, ib),
            bank,
        )
        geo = np.sum(ratios, axis=1) / ratios.shape[1]
    cost = geo + app
    return np.where(np.isnan(cost), np.inf, cost)


def edge_costs(
    graph: MergeGraph,
    splats: SplatSet,
    params: CostParams,
    block_size: int = DEFAULT_BLOCK,
    bank: SharedSampleBank | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Cost of every edge in ``graph``; also stored on ``graph.costs``.

    Blocks of at most ``block_size`` edges are scored independently (and in
    parallel when ``workers > 1``); the result does not depend on either.
    """
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    if bank is None and params.cost_mode is CostMode.IDIV:
        bank = SharedSampleBank.from_seed(params.rng_seed, params.sample_count)
    edges = graph.edges
    costs = np.empty(len(edges))
    if len(edges):
        cache = _PassCache.build(splats)
        # every edge is scored independently, so capping the unit of work
        # keeps peak memory at O(workers * _TASK_EDGES) without changing bits
        step = min(block_size, _TASK_EDGES)
        starts = range(0, len(edges), step)

        def run(start):
            e = edges[start : start + step]
            costs[start : start + len(e)] = _block_costs(cache, e[:, 0], e[:, 1], params, bank)

        if workers > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(run, starts))
        else:
            for start in starts:
                run(start)
    graph.costs = costs
    return costs
