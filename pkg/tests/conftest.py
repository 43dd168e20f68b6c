import struct

import numpy as np
import pytest

from splatmerge.splat_model import Splat, SplatSet
from splatmerge.synthetic import random_quaternions


def ply_names(sh_degree: int, normals: bool = True) -> list[str]:
    """Property names of a 3DGS vertex record, written out independently."""
    n_rest = {0: 0, 1: 9, 2: 24, 3: 45}[sh_degree]
    names = ["x", "y", "z"] + (["nx", "ny", "nz"] if normals else [])
    names += ["f_dc_0", "f_dc_1", "f_dc_2"] + [f"f_rest_{i}" for i in range(n_rest)]
    return names + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]


def struct_ply(rows, sh_degree: int = 0, normals: bool = True, fmt: str = "binary_little_endian 1.0", extra_header=()):
    """Build a PLY byte-by-byte with ``struct``; ``rows`` is an iterable of
    per-record float sequences in property order."""
    rows = [list(r) for r in rows]
    names = ply_names(sh_degree, normals)
    head = ["ply", f"format {fmt}", *extra_header, f"element vertex {len(rows)}"]
    head += [f"property float {n}" for n in names] + ["end_header"]
    out = ("\n".join(head) + "\n").encode("ascii")
    for r in rows:
        assert len(r) == len(names)
        out += struct.pack(f"<{len(names)}f", *r)
    return out


def raw_row(xyz=(0, 0, 0), normal=(0, 0, 0), f_dc=(0, 0, 0), f_rest=(), opacity=0.0, scale=(0, 0, 0), rot=(1, 0, 0, 0), normals=True):
    return [*xyz, *(normal if normals else ()), *f_dc, *f_rest, opacity, *scale, *rot]


def random_raw_rows(rng, n, sh_degree=0, normals=True):
    n_rest = 3 * ((sh_degree + 1) ** 2 - 1)
    q = random_quaternions(rng, n)
    rows = []
    for i in range(n):
        rows.append(
            raw_row(
                xyz=rng.standard_normal(3),
                normal=rng.standard_normal(3),
                f_dc=rng.standard_normal(3),
                f_rest=rng.standard_normal(n_rest) * 0.1,
                opacity=rng.uniform(-6, 6),
                scale=rng.uniform(-5, 1, 3),
                rot=q[i],
                normals=normals,
            )
        )
    return rows


def make_splat(mu=(0, 0, 0), scale=(1, 1, 1), rot=(1, 0, 0, 0), alpha=0.5, features=(0, 0, 0)) -> Splat:
    return Splat(
        np.asarray(mu, float), np.asarray(scale, float), np.asarray(rot, float), float(alpha), np.asarray(features, float)
    )


def random_set(rng, n, sh_degree=0, spread=1.0) -> SplatSet:
    f = 3 * (sh_degree + 1) ** 2
    return SplatSet(
        rng.standard_normal((n, 3)) * spread,
        np.exp(rng.uniform(-1.5, 0.5, (n, 3))),
        random_quaternions(rng, n),
        rng.uniform(0.01, 1.0, n),
        rng.standard_normal((n, f)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
