import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_splat, random_set
from splatmerge.errors import MasslessPairError, PlanError
from splatmerge.mpmm import MergePlan, apply_plan, mass_weight, merge_batch, merge_pair, merged_covariance, over_alpha
from splatmerge.oracle_kit import mixture_moments
from splatmerge.splat_model import SplatSet, covariance_from_scale_rot
from splatmerge.synthetic import random_quaternions


def _splats_equal(x, y):
    return all(np.array_equal(getattr(x, f), getattr(y, f)) for f in ("mu", "scale", "rot", "features")) and x.alpha == y.alpha


def test_identical_pair_reproduces_input():
    rng = np.random.default_rng(0)
    a = random_set(rng, 1, sh_degree=3)[0]
    m = merge_pair(a, a)
    assert np.array_equal(m.mu, a.mu)
    assert np.array_equal(m.features, a.features)
    assert np.allclose(m.covariance, a.covariance, rtol=1e-12, atol=1e-15)
    assert m.alpha == pytest.approx(2 * a.alpha - a.alpha**2, rel=1e-15)
    mu_m, cov_m = merged_covariance(a, a)
    assert np.array_equal(mu_m, a.mu) and np.array_equal(cov_m, a.covariance)


def test_two_unit_gaussians():
    m = merge_pair(make_splat(), make_splat(mu=(2, 0, 0)))
    assert np.allclose(m.mu, [1, 0, 0])
    assert np.allclose(m.covariance, np.diag([2.0, 1, 1]))
    assert m.alpha == 0.75


def test_over_alpha():
    assert over_alpha(0.5, 0.5) == 0.75
    assert over_alpha(0.0, 0.3) == 0.3
    assert over_alpha(1.0, 0.3) == 1.0


def test_matches_mixture_moments():
    rng = np.random.default_rng(1)
    a_set, b_set = random_set(rng, 1000), random_set(rng, 1000)
    for i in range(1000):
        a, b = a_set[i], b_set[i]
        wa, wb = float(mass_weight(a.alpha, a.scale)), float(mass_weight(b.alpha, b.scale))
        mean, cov = mixture_moments(wa / (wa + wb), a.mu, a.covariance, b.mu, b.covariance)
        mu_m, cov_m = merged_covariance(a, b)
        assert np.linalg.norm(mu_m - mean) <= 1e-10 * np.linalg.norm(mean)
        assert np.linalg.norm(cov_m - cov) <= 1e-10 * np.linalg.norm(cov)


def test_merged_eigenvalues_not_below_components():
    rng = np.random.default_rng(2)
    a_set, b_set = random_set(rng, 300), random_set(rng, 300)
    for i in range(300):
        a, b = a_set[i], b_set[i]
        _, cov_m = merged_covariance(a, b)
        floor = min(np.linalg.eigvalsh(a.covariance).min(), np.linalg.eigvalsh(b.covariance).min())
        assert np.linalg.eigvalsh(cov_m).min() >= floor - 1e-9 * np.trace(cov_m)


def _random_pair_sets(rng, n):
    def one():
        return SplatSet(
            rng.standard_normal((n, 3)) * 2,
            np.exp(rng.uniform(-3, 1, (n, 3))),
            random_quaternions(rng, n),
            rng.uniform(0.0, 1.0, n),
            rng.standard_normal((n, 12)),
        )

    return one(), one()


def test_invariants_batch():
    rng = np.random.default_rng(3)
    a, b = _random_pair_sets(rng, 20_000)
    ab = merge_batch(a, b)
    ba = merge_batch(b, a)
    for f in ("mu", "scale", "rot", "alpha", "features"):
        assert np.array_equal(getattr(ab, f), getattr(ba, f)), f
    hi = np.maximum(a.alpha, b.alpha)
    assert np.all(ab.alpha >= hi)
    assert np.all(ab.alpha <= np.minimum(1.0, a.alpha + b.alpha))
    cov = ab.covariances
    ev = np.linalg.eigvalsh(cov)
    assert np.all(ev.min(axis=1) >= -1e-9 * np.trace(cov, axis1=1, axis2=2))


def test_mass_bias_bound():
    rng = np.random.default_rng(4)
    a, b = _random_pair_sets(rng, 5000)
    mom_mu = merge_batch(a, b).mu
    wa, wb = mass_weight(a.alpha, a.scale), mass_weight(b.alpha, b.scale)
    bound = wb / (wa + wb) * np.linalg.norm(a.mu - b.mu, axis=1)
    assert np.all(np.linalg.norm(mom_mu - a.mu, axis=1) <= bound * (1 + 1e-12) + 1e-12)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**31))
def test_opacity_bounds_property(alpha_a, alpha_b, seed):
    rng = np.random.default_rng(seed)
    s = random_set(rng, 2)
    a = make_splat(s.mu[0], s.scale[0], s.rot[0], alpha_a)
    b = make_splat(s.mu[1], s.scale[1], s.rot[1], alpha_b)
    if alpha_a == 0 and alpha_b == 0:
        with pytest.raises(MasslessPairError):
            merge_pair(a, b)
        return
    m = merge_pair(a, b)
    assert max(alpha_a, alpha_b) <= m.alpha <= min(1.0, alpha_a + alpha_b)
    assert _splats_equal(m, merge_pair(b, a))


def test_equal_mass_ties_are_symmetric():
    # equal masses by construction; only the tie-break key orders them
    a = make_splat(mu=(0, 0, 0), scale=(2, 1, 1), alpha=0.5)
    b = make_splat(mu=(1, 2, 3), scale=(1, 2, 1), rot=(0, 0, 0, 1), alpha=0.5, features=(1, 0, 0))
    assert mass_weight(a.alpha, a.scale) == mass_weight(b.alpha, b.scale)
    assert _splats_equal(merge_pair(a, b), merge_pair(b, a))


def test_merge_roundtrip_scale_rot():
    rng = np.random.default_rng(5)
    a, b = _random_pair_sets(rng, 2000)
    m = merge_batch(a, b)
    mu_m = m.mu
    for i in range(0, 2000, 50):
        _, cov = merged_covariance(a[i], b[i])
        back = covariance_from_scale_rot(m.scale[i], m.rot[i])
        assert np.linalg.norm(back - cov) <= 1e-5 * np.linalg.norm(cov)
        assert np.array_equal(mu_m[i], merged_covariance(a[i], b[i])[0])


def test_massless_pair_error():
    with pytest.raises(MasslessPairError):
        merge_pair(make_splat(alpha=0), make_splat(alpha=0))


def test_apply_plan_counts_and_order():
    rng = np.random.default_rng(6)
    s = random_set(rng, 4)
    assert apply_plan(s, MergePlan(np.zeros((0, 2)))) is s
    out = apply_plan(s, MergePlan([[0, 1], [2, 3]]))
    assert len(out) == 2
    assert np.array_equal(out.mu[0], merge_pair(s[0], s[1]).mu)
    s5 = random_set(rng, 5)
    out = apply_plan(s5, MergePlan([[3, 1]]))
    # survivors first, in order, then merged
    assert np.array_equal(out.mu[:3], s5.mu[[0, 2, 4]])
    assert np.array_equal(out.mu[3], merge_pair(s5[3], s5[1]).mu)


def test_apply_plan_zeroes_merged_normals():
    rng = np.random.default_rng(7)
    s = random_set(rng, 3)
    s.normals = rng.standard_normal((3, 3))
    out = apply_plan(s, MergePlan([[0, 2]]))
    assert np.array_equal(out.normals[0], s.normals[1])
    assert not out.normals[1].any()


def test_plan_validation():
    s = random_set(np.random.default_rng(8), 4)
    with pytest.raises(PlanError, match="not a matching"):
        apply_plan(s, MergePlan([[0, 1], [1, 2]]))
    with pytest.raises(PlanError, match="out of range"):
        apply_plan(s, MergePlan([[0, 4]]))


def test_apply_plan_matches_pairwise():
    rng = np.random.default_rng(9)
    s = random_set(rng, 200, sh_degree=1)
    perm = rng.permutation(200)
    plan = MergePlan(perm[:120].reshape(-1, 2))
    out = apply_plan(s, plan)
    for k, (i, j) in enumerate(plan.pairs):
        assert _splats_equal(out[80 + k], merge_pair(s[i], s[j]))
