"""In-memory Gaussian primitives and the storage <-> world-space conversions.

Everything here is columnar numpy. A ``SplatSet`` holds activated values
(positive scales, opacity in [0, 1], unit quaternions in (w, x, y, z) order);
``RawSplats`` holds the float32 values as they sit in a 3DGS PLY file
(log-scales, logit opacities, unnormalized quaternions).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCovarianceError

SH_FEATURE_COUNTS = {0: 3, 1: 12, 2: 27, 3: 48}
OPACITY_CLAMP = 1e-7
EIGEN_FLOOR = 1e-12
QUAT_TOL = 1e-6


def sh_degree_from_features(n_features: int) -> int:
    for degree, count in SH_FEATURE_COUNTS.items():
        if count == n_features:
            return degree
    raise ValueError(f"feature length {n_features} is not 3*(d+1)^2 for d in 0..3")


@dataclass(frozen=True)
class Splat:
    """A single Gaussian primitive in world space."""

    mu: np.ndarray
    scale: np.ndarray
    rot: np.ndarray
    alpha: float
    features: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        return covariance_from_scale_rot(self.scale, self.rot)


@dataclass
class SplatSet:
    """Columnar storage for N activated splats.

    ``normals`` is carried through from the source file untouched; it is
    ``None`` for sets built in memory.
    """

    mu: np.ndarray
    scale: np.ndarray
    rot: np.ndarray
    alpha: np.ndarray
    features: np.ndarray
    normals: np.ndarray | None = None
    sh_degree: int = field(init=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1, 3)
        n = len(self.mu)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(n, 3)
        self.rot = np.asarray(self.rot, dtype=np.float64).reshape(n, 4)
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(n)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            self.features = self.features.reshape(n, -1)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(n, 3)
        self.sh_degree = sh_degree_from_features(self.features.shape[1])

    def __len__(self) -> int:
        return len(self.mu)

    def __getitem__(self, i: int) -> Splat:
        return Splat(
            self.mu[i].copy(),
            self.scale[i].copy(),
            self.rot[i].copy(),
            float(self.alpha[i]),
            self.features[i].copy(),
        )

    @classmethod
    def empty(cls, sh_degree: int = 0) -> "SplatSet":
        f = SH_FEATURE_COUNTS[sh_degree]
        return cls(
            np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, f))
        )

    @classmethod
    def from_splats(cls, splats: list[Splat]) -> "SplatSet":
        return cls(
            np.array([s.mu for s in splats]).reshape(-1, 3),
            np.array([s.scale for s in splats]).reshape(-1, 3),
            np.array([s.rot for s in splats]).reshape(-1, 4),
            np.array([s.alpha for s in splats], dtype=np.float64),
            np.array([s.features for s in splats]),
        )

    def subset(self, index) -> "SplatSet":
        return SplatSet(
            self.mu[index],
            self.scale[index],
            self.rot[index],
            self.alpha[index],
            self.features[index],
            None if self.normals is None else self.normals[index],
        )

    @property
    def covariances(self) -> np.ndarray:
        return covariance_from_scale_rot(self.scale, self.rot)

    def check(self) -> None:
        """Raise ``ValueError`` unless every row satisfies the splat invariants."""
        if not np.all(self.scale > 0):
            raise ValueError("non-positive scale")
        if not np.allclose(np.linalg.norm(self.rot, axis=1), 1.0, atol=1e-6):
            raise ValueError("rotation quaternion not normalized")
        if not np.all((self.alpha >= 0) & (self.alpha <= 1)):
            raise ValueError("opacity outside [0, 1]")


def concat(sets: list[SplatSet]) -> SplatSet:
    keep_normals = all(s.normals is not None for s in sets)
    return SplatSet(
        np.concatenate([s.mu for s in sets]),
        np.concatenate([s.scale for s in sets]),
        np.concatenate([s.rot for s in sets]),
        np.concatenate([s.alpha for s in sets]),
        np.concatenate([s.features for s in sets]),
        np.concatenate([s.normals for s in sets]) if keep_normals else None,
    )


# --- rotations -------------------------------------------------------------


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(..., 4) quaternions (w, x, y, z) -> (..., 3, 3) rotation matrices.

    The input is normalized first, so q and -q give the same matrix.
    """
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def rotmat_to_quat(r: np.ndarray) -> np.ndarray:
    """Proper rotation matrices -> unit quaternions with w >= 0.

    Shepperd's method: pick the largest of (trace, diagonal entries) as the
    pivot so the square root never sees a small argument.
    """
    r = np.asarray(r, dtype=np.float64)
    shape = r.shape[:-2]
    r = r.reshape(-1, 3, 3)
    m00, m11, m22 = r[:, 0, 0], r[:, 1, 1], r[:, 2, 2]
    trace = m00 + m11 + m22
    pivot = np.argmax(np.stack([trace, m00, m11, m22], axis=1), axis=1)
    q = np.empty((len(r), 4))

    s = pivot == 0
    t = np.sqrt(np.maximum(1.0 + trace[s], 0.0)) * 2
    q[s, 0] = 0.25 * t
    q[s, 1] = (r[s, 2, 1] - r[s, 1, 2]) / t
    q[s, 2] = (r[s, 0, 2] - r[s, 2, 0]) / t
    q[s, 3] = (r[s, 1, 0] - r[s, 0, 1]) / t

    s = pivot == 1
    t = np.sqrt(np.maximum(1.0 + m00[s] - m11[s] - m22[s], 0.0)) * 2
    q[s, 0] = (r[s, 2, 1] - r[s, 1, 2]) / t
    q[s, 1] = 0.25 * t
    q[s, 2] = (r[s, 0, 1] + r[s, 1, 0]) / t
    q[s, 3] = (r[s, 0, 2] + r[s, 2, 0]) / t

    s = pivot == 2
    t = np.sqrt(np.maximum(1.0 + m11[s] - m00[s] - m22[s], 0.0)) * 2
    q[s, 0] = (r[s, 0, 2] - r[s, 2, 0]) / t
    q[s, 1] = (r[s, 0, 1] + r[s, 1, 0]) / t
    q[s, 2] = 0.25 * t
    q[s, 3] = (r[s, 1, 2] + r[s, 2, 1]) / t

    s = pivot == 3
    t = np.sqrt(np.maximum(1.0 + m22[s] - m00[s] - m11[s], 0.0)) * 2
    q[s, 0] = (r[s, 1, 0] - r[s, 0, 1]) / t
    q[s, 1] = (r[s, 0, 2] + r[s, 2, 0]) / t
    q[s, 2] = (r[s, 1, 2] + r[s, 2, 1]) / t
    q[s, 3] = 0.25 * t

    q *= np.where(q[:, :1] < 0, -1.0, 1.0)
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q.reshape(shape + (4,))


# --- covariance <-> (scale, rotation) ---------------------------------------


def covariance_from_scale_rot(scale: np.ndarray, rot: np.ndarray) -> np.ndarray:
    """Sigma = R diag(s)^2 R^T, batched over leading axes."""
    scale = np.asarray(scale, dtype=np.float64)
    r = quat_to_rotmat(rot)
    m = r * scale[..., None, :]
    cov = m @ np.swapaxes(m, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def scale_rot_from_covariance(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decompose symmetric PSD covariances into per-axis std devs and a quaternion.

    Eigenvalues are floored at ``1e-12 * max(trace, 1)`` so nearly flat merged
    Gaussians still get a finite log-scale. The eigenvector basis is flipped to
    a proper rotation when LAPACK hands back a reflection.
    """
    cov = np.asarray(cov, dtype=np.float64)
    shape = cov.shape[:-2]
    cov = cov.reshape(-1, 3, 3)
    if not np.all(np.isfinite(cov)):
        raise DegenerateCovarianceError("degenerate covariance")
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    evals, evecs = np.linalg.eigh(cov)
    trace = np.trace(cov, axis1=1, axis2=2)
    floor = EIGEN_FLOOR * np.maximum(trace, 1.0)
    evals = np.maximum(evals, floor[:, None])
    flip = np.linalg.det(evecs) < 0
    evecs[flip, :, 2] *= -1
    scale = np.sqrt(evals)
    return scale.reshape(shape + (3,)), rotmat_to_quat(evecs).reshape(shape + (4,))


# --- activation ------------------------------------------------------------


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class RawSplats:
    """Float32 columns exactly as stored in a 3DGS PLY vertex element."""

    xyz: np.ndarray
    normals: np.ndarray | None
    f_dc: np.ndarray
    f_rest: np.ndarray
    opacity: np.ndarray
    scale: np.ndarray
    rot: np.ndarray

    def __len__(self) -> int:
        return len(self.xyz)


def activate(raw: RawSplats) -> tuple[SplatSet, int]:
    """Map stored values to world space; returns the set and the dropped count.

    Quaternions further than 1e-6 from unit length are renormalized. Rows whose
    activated values are non-finite, whose scale underflows to zero, or whose
    quaternion has zero length are dropped.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        xyz = raw.xyz.astype(np.float64)
        scale = np.exp(raw.scale.astype(np.float64))
        alpha = sigmoid(raw.opacity.astype(np.float64))
        rot = raw.rot.astype(np.float64)
        qn = np.linalg.norm(rot, axis=1, keepdims=True)
        # float32 unit quaternions are already unit within 1e-6; leaving them
        # alone keeps read -> write byte-identical
        off = np.abs(qn[:, 0] - 1.0) > QUAT_TOL
        rot[off] = rot[off] / qn[off]
        feats = np.concatenate([raw.f_dc, raw.f_rest], axis=1).astype(np.float64)
    valid = (
        np.all(np.isfinite(xyz), axis=1)
        & np.all(np.isfinite(scale) & (scale > 0), axis=1)
        & np.isfinite(alpha)
        & np.all(np.isfinite(rot), axis=1)
        & (qn[:, 0] > 0)
        & np.all(np.isfinite(feats), axis=1)
    )
    normals = None if raw.normals is None else raw.normals.astype(np.float64)
    out = SplatSet(xyz, scale, rot, alpha, feats, normals)
    dropped = int(len(valid) - valid.sum())
    if dropped:
        out = out.subset(valid)
    return out, dropped


def deactivate(splats: SplatSet) -> RawSplats:
    alpha = np.clip(splats.alpha, OPACITY_CLAMP, 1.0 - OPACITY_CLAMP)
    f32 = np.float32
    n = len(splats)
    normals = splats.normals if splats.normals is not None else np.zeros((n, 3))
    return RawSplats(
        xyz=splats.mu.astype(f32),
        normals=normals.astype(f32),
        f_dc=splats.features[:, :3].astype(f32),
        f_rest=splats.features[:, 3:].astype(f32),
        opacity=logit(alpha).astype(f32),
        scale=np.log(splats.scale).astype(f32),
        rot=splats.rot.astype(f32),
    )
