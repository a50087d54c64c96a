"""Binary dataset (FCPD v1) and operator (FCPO v1) files.

FCPD layout, all integers and floats little-endian::

    magic    4 bytes  b"FCPD"
    version  u32      1
    ndim     u8
    counts   ndim x u64   cells per axis
    kind     u8       0 uniform, 1 center, 2 boundary, 3 explicit
    edges    (explicit only) per axis, counts[k] + 1 x f64
    n        u64      number of samples
    data     n x (input, output), each prod(counts) x f64, row-major

FCPO stores one or more spectral operators::

    magic    4 bytes  b"FCPO"
    version  u32      1
    count    u32
    per operator:
        dim u8, modes u32, ridge f64, train_residual f64,
        coef (u8 rank, rank x u64 shape, f64 data), bias (same)
"""

from __future__ import annotations

import os
import struct
from typing import Sequence

import numpy as np

from ..errors import FormatError, InvalidArgumentError
from ..grid import Field, Grid, GridKind, make_grid
from ..surrogates import SpectralOperator

__all__ = ["write_dataset", "read_dataset", "write_operators", "read_operators"]

DATASET_MAGIC = b"FCPD"
OPERATOR_MAGIC = b"FCPO"
VERSION = 1


def _atomic_write(path, chunks):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def write_dataset(path, grid: Grid, samples: Sequence[tuple[Field, Field]]) -> None:
    """Write ``(input, output)`` pairs living on ``grid``."""
    samples = list(samples)
    for i, (x, y) in enumerate(samples):
        if x.grid != grid or y.grid != grid:
            raise InvalidArgumentError(f"sample {i} does not live on the dataset grid")
    head = [DATASET_MAGIC, struct.pack("<IB", VERSION, grid.dim)]
    head.append(struct.pack(f"<{grid.dim}Q", *grid.shape))
    head.append(struct.pack("<B", int(grid.kind)))
    if grid.kind == GridKind.EXPLICIT:
        head.extend(_f64(e) for e in grid.edges)
    head.append(struct.pack("<Q", len(samples)))
    body = (_f64(f.values) for pair in samples for f in pair)
    _atomic_write(path, [*head, *body])


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"truncated file while reading {what}: need {self.pos + n} bytes, file has {len(self.buf)}",
                self.pos,
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, n: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * n, what), dtype="<f8").astype(np.float64)

    def header(self, magic: bytes):
        got = self.take(4, "magic")
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
        (version,) = self.unpack("<I", "version")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}, expected {VERSION}", 4)


def read_dataset(path) -> tuple[Grid, list[tuple[Field, Field]]]:
    """Read an FCPD file.

    Raises
    ------
    FormatError
        On bad magic, unsupported version, invalid header fields, or a file
        length that disagrees with the header.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    r.header(DATASET_MAGIC)
    (ndim,) = r.unpack("<B", "ndim")
    if ndim == 0:
        raise FormatError("ndim must be >= 1", r.pos - 1)
    at = r.pos
    counts = r.unpack(f"<{ndim}Q", "cell counts")
    if min(counts) == 0:
        raise FormatError(f"zero cell count in {counts}", at)
    at = r.pos
    (kind_code,) = r.unpack("<B", "grid kind")
    try:
        kind = GridKind(kind_code)
    except ValueError:
        raise FormatError(f"unknown grid kind {kind_code}", at) from None
    if kind == GridKind.EXPLICIT:
        at = r.pos
        edges = [r.floats(n + 1, f"edges of axis {k}") for k, n in enumerate(counts)]
        try:
            grid = Grid(tuple(edges), GridKind.EXPLICIT)
        except InvalidArgumentError as exc:
            raise FormatError(f"invalid explicit edges: {exc}", at) from exc
    else:
        grid = make_grid(kind, counts)
    (n,) = r.unpack("<Q", "sample count")
    d = grid.size
    expected = r.pos + 2 * n * d * 8
    if len(buf) != expected:
        raise FormatError(
            f"file length {len(buf)} does not match header ({expected} bytes expected for {n} samples)",
            min(len(buf), expected),
        )
    data = np.frombuffer(buf, dtype="<f8", offset=r.pos).astype(np.float64).reshape(n, 2, d)
    samples = [(Field(grid, data[i, 0]), Field(grid, data[i, 1])) for i in range(n)]
    return grid, samples


def _array(a) -> list[bytes]:
    a = np.asarray(a)
    return [struct.pack("<B", a.ndim), struct.pack(f"<{a.ndim}Q", *a.shape), _f64(a)]


def write_operators(path, ops: Sequence[SpectralOperator]) -> None:
    ops = list(ops)
    chunks = [OPERATOR_MAGIC, struct.pack("<II", VERSION, len(ops))]
    for op in ops:
        chunks.append(struct.pack("<BIdd", op.dim, op.modes, op.ridge, op.train_residual))
        chunks.extend(_array(op.coef))
        chunks.extend(_array(op.bias))
    _atomic_write(path, chunks)


def read_operators(path) -> list[SpectralOperator]:
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    r.header(OPERATOR_MAGIC)
    (count,) = r.unpack("<I", "operator count")
    ops = []
    for i in range(count):
        dim, modes, ridge, resid = r.unpack("<BIdd", f"header of operator {i}")
        arrays = []
        for name in ("coef", "bias"):
            (rank,) = r.unpack("<B", f"{name} rank")
            shape = r.unpack(f"<{rank}Q", f"{name} shape")
            arrays.append(r.floats(int(np.prod(shape)), name).reshape(shape))
        at = r.pos
        try:
            ops.append(SpectralOperator(dim, modes, arrays[0], arrays[1], ridge, resid))
        except InvalidArgumentError as exc:
            raise FormatError(f"operator {i} is inconsistent: {exc}", at) from exc
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after {count} operators", r.pos)
    return ops
