"""Binary little-endian 3DGS PLY reading and writing.

The vertex layout is the one written by the reference 3DGS trainer::

    x y z [nx ny nz] f_dc_0..2 f_rest_0..M-1 opacity scale_0..2 rot_0..3

with every property a 32-bit float and M in {0, 9, 24, 45}. Normals are
optional on read and always written (zeros when the set carries none).
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from .errors import PlyFormatError, SplatError
from .splat_model import RawSplats, SplatSet, activate, deactivate

F_REST_COUNTS = {0: 0, 9: 1, 24: 2, 45: 3}
FLOAT_TYPES = {"float", "float32"}
CHUNK_RECORDS = 1 << 16


class PlyIOError(SplatError, OSError):
    pass


def canonical_properties(sh_degree: int, normals: bool = True) -> list[str]:
    n_rest = 3 * ((sh_degree + 1) ** 2 - 1)
    names = ["x", "y", "z"]
    if normals:
        names += ["nx", "ny", "nz"]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(n_rest)]
    names += ["opacity"]
    names += [f"scale_{i}" for i in range(3)]
    names += [f"rot_{i}" for i in range(4)]
    return names


def record_size(sh_degree: int) -> int:
    return len(canonical_properties(sh_degree)) * 4


@dataclass
class PlyHeader:
    format: str
    count: int
    properties: list[str]
    header_bytes: int

    @property
    def has_normals(self) -> bool:
        return "nx" in self.properties

    @property
    def sh_degree(self) -> int:
        n_rest = sum(p.startswith("f_rest_") for p in self.properties)
        return F_REST_COUNTS[n_rest]

    @property
    def record_size(self) -> int:
        return 4 * len(self.properties)


def _validate_properties(names: list[str]) -> None:
    n_rest = sum(p.startswith("f_rest_") for p in names)
    if n_rest not in F_REST_COUNTS:
        raise PlyFormatError(f"not a 3DGS asset, {n_rest} f_rest properties (expected 0, 9, 24 or 45)")
    expected = canonical_properties(F_REST_COUNTS[n_rest], normals="nx" in names)
    for name in expected:
        if name not in names:
            raise PlyFormatError(f"not a 3DGS asset, missing {name}")
    for name in names:
        if name not in expected:
            raise PlyFormatError(f"not a 3DGS asset, unknown property {name}")
    if names != expected:
        raise PlyFormatError("not a 3DGS asset, properties out of canonical order")


def read_header(stream: BinaryIO) -> PlyHeader:
    first = stream.readline()
    if first.rstrip(b"\r\n") != b"ply":
        raise PlyFormatError("not a PLY file")
    consumed = len(first)
    fmt = None
    count = None
    props: list[str] = []
    current = None
    while True:
        line = stream.readline()
        if not line:
            raise PlyFormatError("unexpected end of data in header")
        consumed += len(line)
        words = line.decode("ascii", errors="replace").split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        key = words[0]
        if key == "end_header":
            break
        if key == "format":
            fmt = " ".join(words[1:])
            if fmt != "binary_little_endian 1.0":
                raise PlyFormatError(f"unsupported format: {fmt}")
        elif key == "element":
            current = words[1]
            if current != "vertex":
                raise PlyFormatError(f"not a 3DGS asset, unexpected element {current}")
            count = int(words[2])
        elif key == "property":
            if current != "vertex":
                raise PlyFormatError("property outside the vertex element")
            if words[1] == "list":
                raise PlyFormatError(f"not a 3DGS asset, list property {words[-1]}")
            if words[1] not in FLOAT_TYPES:
                raise PlyFormatError(f"not a 3DGS asset, property {words[2]} has type {words[1]}")
            props.append(words[2])
        else:
            raise PlyFormatError(f"unrecognized header line: {line!r}")
    if fmt is None:
        raise PlyFormatError("unsupported format: missing format line")
    if count is None:
        raise PlyFormatError("not a 3DGS asset, missing vertex element")
    _validate_properties(props)
    return PlyHeader(fmt, count, props, consumed)


def _open_read(source) -> tuple[BinaryIO, bool]:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return io.BytesIO(source), True
    if isinstance(source, (str, os.PathLike)):
        return open(source, "rb"), True
    return source, False


def read_raw(source) -> tuple[RawSplats, PlyHeader]:
    """Parse a PLY into float32 columns without activating anything."""
    stream, owned = _open_read(source)
    try:
        header = read_header(stream)
        n_props = len(header.properties)
        rec = header.record_size
        data = np.empty((header.count, n_props), dtype=np.float32)
        done = 0
        while done < header.count:
            want = min(CHUNK_RECORDS, header.count - done)
            buf = stream.read(want * rec)
            got = len(buf) // rec
            if got:
                data[done : done + got] = np.frombuffer(buf, dtype="<f4", count=got * n_props).reshape(got, n_props)
            if got < want:
                raise PlyFormatError(f"unexpected end of data at record {done + got}")
            done += got
    finally:
        if owned:
            stream.close()

    col = {name: i for i, name in enumerate(header.properties)}

    def cols(names):
        return data[:, [col[n] for n in names]] if names else np.zeros((header.count, 0), np.float32)

    n_rest = 3 * ((header.sh_degree + 1) ** 2 - 1)
    raw = RawSplats(
        xyz=cols(["x", "y", "z"]),
        normals=cols(["nx", "ny", "nz"]) if header.has_normals else None,
        f_dc=cols([f"f_dc_{i}" for i in range(3)]),
        f_rest=cols([f"f_rest_{i}" for i in range(n_rest)]),
        opacity=data[:, col["opacity"]].copy(),
        scale=cols([f"scale_{i}" for i in range(3)]),
        rot=cols([f"rot_{i}" for i in range(4)]),
    )
    return raw, header


def read_splat_ply(source, return_dropped: bool = False):
    """Read a 3DGS PLY (path, bytes or binary stream) into an activated SplatSet.

    Records that fail activation are dropped; pass ``return_dropped=True`` to
    get ``(splats, dropped_count)``.
    """
    raw, header = read_raw(source)
    splats, dropped = activate(raw)
    return (splats, dropped) if return_dropped else splats


def header_bytes(sh_degree: int, count: int) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {count}"]
    lines += [f"property float {name}" for name in canonical_properties(sh_degree)]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def write_splat_ply(splats: SplatSet, sink) -> None:
    """Write ``splats`` in canonical 3DGS layout to a path or binary stream.

    Opacity is clipped to [0, 1] before the logit (which itself clamps to
    [1e-7, 1 - 1e-7]).
    """
    clipped = SplatSet(
        splats.mu, splats.scale, splats.rot, np.clip(splats.alpha, 0.0, 1.0), splats.features, splats.normals
    )
    raw = deactivate(clipped)
    head = header_bytes(splats.sh_degree, len(splats))
    owned = isinstance(sink, (str, os.PathLike))
    offset = 0
    try:
        stream = open(sink, "wb") if owned else sink
    except OSError as exc:
        raise PlyIOError(f"cannot open {sink}: {exc}") from exc
    try:
        stream.write(head)
        offset = len(head)
        rec = record_size(splats.sh_degree)
        for start in range(0, len(splats), CHUNK_RECORDS):
            sl = slice(start, start + CHUNK_RECORDS)
            block = np.concatenate(
                [raw.xyz[sl], raw.normals[sl], raw.f_dc[sl], raw.f_rest[sl], raw.opacity[sl, None], raw.scale[sl], raw.rot[sl]],
                axis=1,
            )
            stream.write(block.astype("<f4").tobytes())
            offset += len(block) * rec
    except OSError as exc:
        raise PlyIOError(f"write failed at byte offset {offset}: {exc}") from exc
    finally:
        if owned:
            stream.close()


def splat_ply_bytes(splats: SplatSet) -> bytes:
    buf = io.BytesIO()
    write_splat_ply(splats, buf)
    return buf.getvalue()
