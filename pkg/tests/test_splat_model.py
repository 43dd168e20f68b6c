import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatmerge.splat_model import (
    RawSplats,
    Splat,
    SplatSet,
    activate,
    concat,
    covariance_from_scale_rot,
    deactivate,
    logit,
    quat_to_rotmat,
    rotmat_to_quat,
    scale_rot_from_covariance,
    sh_degree_from_features,
    sigmoid,
)
from splatmerge.synthetic import random_quaternions

ROT_Z90 = np.array([np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)])


def test_covariance_identity():
    assert np.allclose(covariance_from_scale_rot(np.ones(3), np.array([1.0, 0, 0, 0])), np.eye(3))


def test_covariance_axis_aligned():
    cov = covariance_from_scale_rot(np.array([2.0, 1, 1]), np.array([1.0, 0, 0, 0]))
    assert np.allclose(cov, np.diag([4.0, 1, 1]))


def test_covariance_rotated_about_z():
    cov = covariance_from_scale_rot(np.array([2.0, 1, 1]), ROT_Z90)
    assert np.allclose(cov, np.diag([1.0, 4, 1]), atol=1e-12)


def test_decompose_diagonal():
    scale, rot = scale_rot_from_covariance(np.diag([4.0, 1, 1]))
    assert np.allclose(np.sort(scale), [1, 1, 2])
    r = quat_to_rotmat(rot)
    # a signed axis permutation: every entry is 0 or +-1
    assert np.allclose(np.abs(r), np.round(np.abs(r)), atol=1e-12)
    assert np.allclose(covariance_from_scale_rot(scale, rot), np.diag([4.0, 1, 1]))


def test_decompose_identity_roundtrip():
    scale, rot = scale_rot_from_covariance(np.eye(3))
    assert np.allclose(scale, 1)
    assert np.allclose(covariance_from_scale_rot(scale, rot), np.eye(3))


def test_decompose_roundtrip_batch():
    rng = np.random.default_rng(0)
    n = 2000
    cov = covariance_from_scale_rot(np.exp(rng.uniform(-4, 2, (n, 3))), random_quaternions(rng, n))
    s, q = scale_rot_from_covariance(cov)
    back = covariance_from_scale_rot(s, q)
    err = np.linalg.norm(back - cov, axis=(1, 2)) / np.linalg.norm(cov, axis=(1, 2))
    assert err.max() < 1e-5
    assert np.all(s > 0)
    assert np.allclose(np.linalg.norm(q, axis=1), 1)
    assert np.all(q[:, 0] >= 0)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-5, 3), min_size=3, max_size=3),
    st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 0.1),
)
def test_decompose_roundtrip_property(log_s, q):
    q = np.array(q) / np.linalg.norm(q)
    cov = covariance_from_scale_rot(np.exp(log_s), q)
    s, r = scale_rot_from_covariance(cov)
    back = covariance_from_scale_rot(s, r)
    assert np.linalg.norm(back - cov) <= 1e-5 * np.linalg.norm(cov)


def test_quaternion_sign_flip_invariance():
    rng = np.random.default_rng(1)
    q = random_quaternions(rng, 100)
    s = np.exp(rng.uniform(-2, 1, (100, 3)))
    assert np.array_equal(covariance_from_scale_rot(s, q), covariance_from_scale_rot(s, -q))


def test_rotmat_quat_roundtrip():
    rng = np.random.default_rng(2)
    q = random_quaternions(rng, 500)
    back = rotmat_to_quat(quat_to_rotmat(q))
    assert np.allclose(back, q, atol=1e-12)


def test_decompose_rejects_nonfinite():
    with pytest.raises(ValueError):
        scale_rot_from_covariance(np.full((3, 3), np.nan))


def test_decompose_floors_singular():
    s, q = scale_rot_from_covariance(np.diag([1.0, 1.0, 0.0]))
    assert np.all(s > 0)


def test_activation_identities():
    assert sigmoid(0.0) == 0.5
    assert np.isclose(logit(0.75), np.log(3.0))
    assert np.isclose(logit(0.75), 1.0986, atol=1e-4)
    raw = RawSplats(
        xyz=np.zeros((1, 3), np.float32),
        normals=None,
        f_dc=np.zeros((1, 3), np.float32),
        f_rest=np.zeros((1, 0), np.float32),
        opacity=np.zeros(1, np.float32),
        scale=np.zeros((1, 3), np.float32),
        rot=np.array([[1, 0, 0, 0]], np.float32),
    )
    s, dropped = activate(raw)
    assert dropped == 0
    assert np.array_equal(s.scale, np.ones((1, 3)))
    assert s.alpha[0] == 0.5


def test_sigmoid_stable_at_extremes():
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        out = sigmoid(np.array([-800.0, 800.0]))
    assert out[0] == 0.0 and out[1] == 1.0


def _random_raw(rng, n, n_rest=0):
    return RawSplats(
        xyz=rng.standard_normal((n, 3)).astype(np.float32),
        normals=rng.standard_normal((n, 3)).astype(np.float32),
        f_dc=rng.standard_normal((n, 3)).astype(np.float32),
        f_rest=rng.standard_normal((n, n_rest)).astype(np.float32),
        opacity=logit(rng.uniform(1e-6, 1 - 1e-6, n)).astype(np.float32),
        scale=rng.uniform(-6, 2, (n, 3)).astype(np.float32),
        rot=random_quaternions(rng, n).astype(np.float32),
    )


@pytest.mark.parametrize("n_rest", [0, 9, 24, 45])
def test_deactivate_activate_roundtrip(n_rest):
    rng = np.random.default_rng(n_rest)
    raw = _random_raw(rng, 500, n_rest)
    s, dropped = activate(raw)
    assert dropped == 0
    back = deactivate(s)
    for name in ("xyz", "normals", "f_dc", "f_rest", "opacity", "scale", "rot"):
        a, b = getattr(raw, name), getattr(back, name)
        assert np.allclose(b, a, rtol=1e-5, atol=1e-6), name


def test_activate_drops_invalid_rows():
    rng = np.random.default_rng(3)
    raw = _random_raw(rng, 6)
    raw.xyz[1, 0] = np.nan
    raw.scale[2, 1] = -np.inf  # exp underflows to a zero scale
    raw.rot[3] = 0
    raw.f_dc[4, 2] = np.inf
    s, dropped = activate(raw)
    assert dropped == 4
    assert len(s) == 2
    assert np.allclose(s.mu, raw.xyz[[0, 5]])


def test_activate_renormalizes_off_unit_quaternions():
    rng = np.random.default_rng(4)
    raw = _random_raw(rng, 3)
    raw.rot[0] *= 3
    s, _ = activate(raw)
    assert np.allclose(np.linalg.norm(s.rot, axis=1), 1)
    # unit quaternions are passed through exactly
    assert np.array_equal(s.rot[1:], raw.rot[1:].astype(np.float64))


def test_deactivate_clamps_opacity():
    s = SplatSet(np.zeros((2, 3)), np.ones((2, 3)), np.tile([1.0, 0, 0, 0], (2, 1)), np.array([0.0, 1.0]), np.zeros((2, 3)))
    raw = deactivate(s)
    assert np.all(np.isfinite(raw.opacity))
    assert raw.normals.shape == (2, 3) and not raw.normals.any()


def test_sh_degree_from_features():
    assert [sh_degree_from_features(n) for n in (3, 12, 27, 48)] == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        sh_degree_from_features(7)


def test_splatset_accessors():
    rng = np.random.default_rng(5)
    s = SplatSet(rng.standard_normal((4, 3)), np.ones((4, 3)), np.tile([1.0, 0, 0, 0], (4, 1)), np.full(4, 0.5), np.zeros((4, 12)))
    assert s.sh_degree == 1
    one = s[2]
    assert isinstance(one, Splat)
    assert np.array_equal(one.mu, s.mu[2])
    assert np.allclose(one.covariance, np.eye(3))
    back = SplatSet.from_splats([s[i] for i in range(4)])
    assert np.array_equal(back.mu, s.mu)
    sub = s.subset(np.array([True, False, True, False]))
    assert len(sub) == 2
    both = concat([s, sub])
    assert len(both) == 6
    assert len(SplatSet.empty(3)) == 0 and SplatSet.empty(3).sh_degree == 3
    s.check()


def test_splatset_check_rejects_bad_rows():
    s = SplatSet(np.zeros((1, 3)), np.array([[1.0, 0, 1]]), np.array([[1.0, 0, 0, 0]]), [0.5], np.zeros((1, 3)))
    with pytest.raises(ValueError):
        s.check()
