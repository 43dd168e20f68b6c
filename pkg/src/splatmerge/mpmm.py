"""Mass-preserving moment matching: fuse two splats into one.

Each splat counts with mass ``w = (2 pi)^(3/2) * alpha * s0 * s1 * s2``. The
merged centre, feature vector and covariance are the mass-weighted first and
second moments of the pair; opacity composes with the "over" rule
``1 - (1 - a)(1 - b)``.

To make ``merge(a, b)`` and ``merge(b, a)`` bitwise identical, the pair is
always evaluated in a canonical operand order (heavier first, then a
lexicographic comparison of the parameters). Moments are written as
interpolations from the first operand, so identical inputs reproduce the
input exactly rather than to within rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MasslessPairError, PlanError
from .splat_model import Splat, SplatSet, concat, covariance_from_scale_rot, scale_rot_from_covariance

MASS_CONST = (2.0 * np.pi) ** 1.5


def mass_weight(alpha, scale):
    """Mass of one or many splats; ``scale`` has shape (..., 3)."""
    scale = np.asarray(scale, dtype=np.float64)
    return MASS_CONST * np.asarray(alpha, dtype=np.float64) * scale[..., 0] * scale[..., 1] * scale[..., 2]


def canonical_swap(w_a, w_b, tie_keys) -> np.ndarray:
    """True where operand b should be evaluated first.

    ``tie_keys(rows)`` returns (key_a, key_b), (len(rows), K) parameter rows
    used to order pairs whose masses are exactly equal.
    """
    swap = w_b > w_a
    tie = np.nonzero(w_b == w_a)[0]
    if len(tie):
        key_a, key_b = tie_keys(tie)
        diff = key_a != key_b
        first = np.argmax(diff, axis=1)
        rows = np.arange(len(tie))
        swap[tie] = (key_b[rows, first] > key_a[rows, first]) & diff[rows, first]
    return swap


def _swap(mask, a, b):
    m = mask.reshape(mask.shape + (1,) * (a.ndim - 1))
    return np.where(m, b, a), np.where(m, a, b)


@dataclass
class Moments:
    mu: np.ndarray  # (n, 3)
    cov: np.ndarray  # (n, 3, 3)
    pi_first: np.ndarray  # mixture weight of the canonical first operand
    total_mass: np.ndarray
    swapped: np.ndarray


def pair_moments(mu_a, cov_a, w_a, mu_b, cov_b, w_b, tie_keys) -> Moments:
    """Mass-weighted mean and covariance for (n,) pairs.

    Pairs with zero or non-finite total mass come back with NaN moments;
    callers decide whether that is an error or an infinite cost.
    """
    swap = canonical_swap(w_a, w_b, tie_keys)
    mu_a, mu_b = _swap(swap, mu_a, mu_b)
    cov_a, cov_b = _swap(swap, cov_a, cov_b)
    w_a, w_b = _swap(swap, w_a, w_b)
    total = w_a + w_b
    with np.errstate(invalid="ignore", divide="ignore"):
        pb = w_b / total
    pa = 1.0 - pb
    d = mu_b - mu_a
    mu = mu_a + pb[:, None] * d
    cov = cov_a + pb[:, None, None] * (cov_b - cov_a) + (pa * pb)[:, None, None] * (d[:, :, None] * d[:, None, :])
    return Moments(mu, cov, pa, total, swap)


def over_alpha(alpha_a, alpha_b):
    lo = np.minimum(alpha_a, alpha_b)
    hi = np.maximum(alpha_a, alpha_b)
    return hi + lo * (1.0 - hi)


def splat_keys(splats: SplatSet, idx) -> np.ndarray:
    return np.concatenate(
        [splats.mu[idx], splats.scale[idx], splats.rot[idx], splats.alpha[idx, None], splats.features[idx]], axis=1
    )


def pair_tie_keys(splats: SplatSet, ia, ib):
    """Tie-break key callback for pairs given as index arrays into one set."""
    ia, ib = np.asarray(ia), np.asarray(ib)
    return lambda rows: (splat_keys(splats, ia[rows]), splat_keys(splats, ib[rows]))


def merge_batch(a: SplatSet, b: SplatSet) -> SplatSet:
    """Row-wise merge of two equally long sets."""
    if len(a) != len(b):
        raise ValueError("merge_batch needs equally long sets")
    if a.features.shape[1] != b.features.shape[1]:
        raise ValueError("feature dimension mismatch")
    w_a = mass_weight(a.alpha, a.scale)
    w_b = mass_weight(b.alpha, b.scale)
    total = w_a + w_b
    if not np.all(np.isfinite(total) & (total > 0)):
        raise MasslessPairError("massless pair")
    mom = pair_moments(
        a.mu, a.covariances, w_a, b.mu, b.covariances, w_b,
        lambda r: (splat_keys(a, r), splat_keys(b, r)),
    )
    f_a, f_b = _swap(mom.swapped, a.features, b.features)
    f = f_a + (1.0 - mom.pi_first)[:, None] * (f_b - f_a)
    scale, rot = scale_rot_from_covariance(mom.cov)
    return SplatSet(mom.mu, scale, rot, over_alpha(a.alpha, b.alpha), f)


def merge_pair(a: Splat, b: Splat) -> Splat:
    """Fuse two splats into one."""
    return merge_batch(SplatSet.from_splats([a]), SplatSet.from_splats([b]))[0]


def merged_covariance(a: Splat, b: Splat) -> tuple[np.ndarray, np.ndarray]:
    """(mu_m, Sigma_m) of the pair before the back-conversion to scale/rot."""
    sa, sb = SplatSet.from_splats([a]), SplatSet.from_splats([b])
    w_a = mass_weight(sa.alpha, sa.scale)
    w_b = mass_weight(sb.alpha, sb.scale)
    if not (w_a + w_b)[0] > 0:
        raise MasslessPairError("massless pair")
    mom = pair_moments(
        sa.mu, covariance_from_scale_rot(sa.scale, sa.rot), w_a,
        sb.mu, covariance_from_scale_rot(sb.scale, sb.rot), w_b,
        lambda r: (splat_keys(sa, r), splat_keys(sb, r)),
    )
    return mom.mu[0], mom.cov[0]


@dataclass
class MergePlan:
    pairs: np.ndarray  # (P, 2) int64

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.pairs)

    def validate(self, n: int) -> None:
        flat = self.pairs.reshape(-1)
        if flat.size and (flat.min() < 0 or flat.max() >= n):
            raise PlanError(f"plan index out of range for {n} splats")
        if len(np.unique(flat)) != flat.size:
            raise PlanError("plan is not a matching")


def apply_plan(splats: SplatSet, plan: MergePlan) -> SplatSet:
    """Merge every planned pair.

    Output order: untouched splats in their original order, then one merged
    splat per pair in plan order.
    """
    n = len(splats)
    plan.validate(n)
    if len(plan) == 0:
        return splats
    used = np.zeros(n, dtype=bool)
    used[plan.pairs.reshape(-1)] = True
    survivors = splats.subset(~used)
    merged = merge_batch(splats.subset(plan.pairs[:, 0]), splats.subset(plan.pairs[:, 1]))
    if splats.normals is not None:
        merged.normals = np.zeros((len(merged), 3))
    return concat([survivors, merged])
