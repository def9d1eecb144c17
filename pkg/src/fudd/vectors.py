"""Embedding math and the binary embedding-matrix file format.

Embeddings are plain 1-D ``float32`` numpy arrays. All accumulation happens in
``float64`` and is cast back to ``float32`` at the end.

File layout (little-endian)::

    8 bytes   magic  b"FUDDEMB1"
    text      "dim=<d> count=<n>\\n"
    n lines   row ids, UTF-8, newline terminated
    n*d*4     float32 payload, row major
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"FUDDEMB1"
_DTYPE = np.dtype("<f4")


class EmbeddingError(ValueError):
    pass


class DimensionMismatchError(EmbeddingError):
    pass


class ZeroNormError(EmbeddingError):
    pass


class MatrixFormatError(ValueError):
    """Base class for problems reading or writing an embedding matrix file."""


class BadMagicError(MatrixFormatError):
    pass


class HeaderError(MatrixFormatError):
    pass


class CountMismatchError(MatrixFormatError):
    pass


class TruncatedPayloadError(MatrixFormatError):
    pass


class TrailingDataError(MatrixFormatError):
    pass


class DuplicateIdError(MatrixFormatError):
    pass


def as_embedding(values) -> np.ndarray:
    """Validate ``values`` and return them as a 1-D float32 array."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 1 or arr.size == 0:
        raise EmbeddingError(f"embedding must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise EmbeddingError("embedding contains NaN or inf")
    return arr


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def cosine(a, b) -> float:
    a = as_embedding(a).astype(np.float64)
    b = as_embedding(b).astype(np.float64)
    _check_dims(a, b)
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine of a zero-norm embedding is undefined")
    sim = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, sim))


def mean_embedding(items: Sequence) -> np.ndarray:
    """Elementwise mean of ``items``, summed in the given order."""
    if len(items) == 0:
        raise EmbeddingError("mean of an empty list of embeddings")
    vecs = [as_embedding(v) for v in items]
    first = vecs[0]
    acc = np.zeros(first.shape, dtype=np.float64)
    for v in vecs:
        _check_dims(first, v)
        acc += v
    return (acc / len(vecs)).astype(np.float32)


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Row-labelled stack of embeddings sharing one dimension."""

    rows: np.ndarray
    row_ids: tuple[str, ...]

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float32)
        if rows.ndim != 2 or rows.shape[1] == 0:
            raise EmbeddingError(f"rows must be a (n, d) array with d >= 1, got {rows.shape}")
        ids = tuple(self.row_ids)
        if len(ids) != rows.shape[0]:
            raise CountMismatchError(f"{len(ids)} ids for {rows.shape[0]} rows")
        if len(set(ids)) != len(ids):
            seen, dupes = set(), []
            for i in ids:
                if i in seen:
                    dupes.append(i)
                seen.add(i)
            raise DuplicateIdError(f"duplicate row ids: {sorted(set(dupes))}")
        if not np.all(np.isfinite(rows)):
            raise EmbeddingError("matrix contains NaN or inf")
        rows = np.ascontiguousarray(rows)
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "row_ids", ids)

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return len(self.row_ids)

    def __getitem__(self, row_id: str) -> np.ndarray:
        return self.rows[self.index[row_id]]

    def __contains__(self, row_id: str) -> bool:
        return row_id in self.index

    @property
    def index(self) -> dict[str, int]:
        idx = self.__dict__.get("_index")
        if idx is None:
            idx = {rid: i for i, rid in enumerate(self.row_ids)}
            object.__setattr__(self, "_index", idx)
        return idx

    @classmethod
    def from_dict(cls, mapping: dict, order: Iterable[str] | None = None) -> "EmbeddingMatrix":
        ids = list(order) if order is not None else list(mapping)
        return cls(np.stack([as_embedding(mapping[i]) for i in ids]), tuple(ids))

    def equals(self, other: "EmbeddingMatrix") -> bool:
        """Bit-exact comparison of ids and float32 payload."""
        return (
            self.row_ids == other.row_ids
            and self.rows.shape == other.rows.shape
            and self.rows.tobytes() == other.rows.tobytes()
        )


def write_matrix(m: EmbeddingMatrix, path) -> None:
    for rid in m.row_ids:
        if not rid or "\n" in rid or "\r" in rid:
            raise MatrixFormatError(f"row id {rid!r} is empty or contains a line break")
    header = f"dim={m.dim} count={len(m)}\n".encode("ascii")
    ids = "".join(rid + "\n" for rid in m.row_ids).encode("utf-8")
    payload = m.rows.astype(_DTYPE, copy=False).tobytes(order="C")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC + header + ids + payload)
    os.replace(tmp, path)


def _readline(buf: bytes, pos: int, what: str) -> tuple[bytes, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise TruncatedPayloadError(f"file ends inside {what}")
    return buf[pos:end], end + 1


def read_matrix(path) -> EmbeddingMatrix:
    buf = Path(path).read_bytes()
    if buf[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not an embedding matrix file")
    line, pos = _readline(buf, len(MAGIC), "header")
    try:
        fields = dict(tok.split("=", 1) for tok in line.decode("ascii").split())
        dim, count = int(fields.pop("dim")), int(fields.pop("count"))
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise HeaderError(f"{path}: malformed header {line!r}") from exc
    if fields or dim < 1 or count < 0:
        raise HeaderError(f"{path}: malformed header {line!r}")

    ids = []
    for i in range(count):
        try:
            raw, pos = _readline(buf, pos, f"row id {i}")
        except TruncatedPayloadError as exc:
            raise CountMismatchError(f"{path}: header declares {count} ids, found {i}") from exc
        ids.append(raw.decode("utf-8"))
    if len(set(ids)) != len(ids):
        raise DuplicateIdError(f"{path}: duplicate row ids")

    expected = count * dim * _DTYPE.itemsize
    got = len(buf) - pos
    if got < expected:
        raise TruncatedPayloadError(f"{path}: payload has {got} bytes, expected {expected}")
    if got > expected:
        raise TrailingDataError(f"{path}: {got - expected} unexpected bytes after payload")
    rows = np.frombuffer(buf, dtype=_DTYPE, count=count * dim, offset=pos).reshape(count, dim)
    return EmbeddingMatrix(rows.astype(np.float32), tuple(ids))
