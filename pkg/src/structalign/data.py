"""Embedding sets and their on-disk format.

The file layout is little-endian and streamable: magic "EMBD", version
u16, flags u16, count u32, dim u32, count*dim float32 values row-major,
then a u32-length-prefixed UTF-8 JSON trailer carrying instance_ids,
category_ids, and a free-form meta description. Every failure mode has
its own error type so callers can tell a wrong file from a damaged one.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"EMBD"
VERSION = 1
_HEADER = struct.Struct("<4sHHII")
_TRAILER_LEN = struct.Struct("<I")


class FormatError(ValueError):
    """Base for embedding-file problems."""


class BadMagicError(FormatError):
    """The file does not start with the EMBD magic."""


class VersionMismatchError(FormatError):
    """The file's format version is not supported."""


class TruncatedPayloadError(FormatError):
    """The file ends before the declared data or trailer."""


class NonFiniteDataError(FormatError):
    """The payload contains NaN or infinite values."""


@dataclass
class EmbeddingSet:
    matrix: np.ndarray
    instance_ids: list[str]
    category_ids: list[str]
    meta: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.instance_ids = [str(s) for s in self.instance_ids]
        self.category_ids = [str(s) for s in self.category_ids]
        n = self.matrix.shape[0] if self.matrix.ndim == 2 else -1
        if self.matrix.ndim != 2 or n < 1:
            raise FormatError(f"matrix must be 2-D with at least one row, got shape {self.matrix.shape}")
        if len(self.instance_ids) != n or len(self.category_ids) != n:
            raise FormatError("instance_ids and category_ids must have one entry per row")
        if len(set(self.instance_ids)) != n:
            raise FormatError("instance_ids must be unique")
        if not np.all(np.isfinite(self.matrix)):
            raise NonFiniteDataError("matrix contains non-finite values")
        if np.any(np.linalg.norm(self.matrix, axis=1) == 0.0):
            raise FormatError("matrix contains zero-norm rows")

    @property
    def count(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def categories(self) -> list[str]:
        return sorted(set(self.category_ids))

    def select(self, row_indices) -> "EmbeddingSet":
        idx = np.asarray(row_indices, dtype=np.int64)
        return EmbeddingSet(
            matrix=self.matrix[idx],
            instance_ids=[self.instance_ids[i] for i in idx],
            category_ids=[self.category_ids[i] for i in idx],
            meta=self.meta,
        )


def save_embeddings(embeddings: EmbeddingSet, path) -> None:
    data = embeddings.matrix.astype("<f4")
    if not np.all(np.isfinite(data)):
        raise NonFiniteDataError("refusing to write non-finite values")
    trailer = json.dumps(
        {
            "instance_ids": embeddings.instance_ids,
            "category_ids": embeddings.category_ids,
            "meta": embeddings.meta,
        }
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, 0, embeddings.count, embeddings.dim))
        fh.write(data.tobytes(order="C"))
        fh.write(_TRAILER_LEN.pack(len(trailer)))
        fh.write(trailer)


def load_embeddings(path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise BadMagicError(f"{path}: too short to be an embedding file")
    magic, version, flags, count, dim = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {VERSION}")
    if flags != 0:
        raise FormatError(f"{path}: unsupported flags {flags:#x}")
    offset = _HEADER.size
    need = count * dim * 4
    if len(blob) < offset + need + _TRAILER_LEN.size:
        raise TruncatedPayloadError(f"{path}: truncated payload")
    values = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=offset)
    offset += need
    (trailer_len,) = _TRAILER_LEN.unpack_from(blob, offset)
    offset += _TRAILER_LEN.size
    if len(blob) < offset + trailer_len:
        raise TruncatedPayloadError(f"{path}: truncated trailer")
    try:
        trailer = json.loads(blob[offset : offset + trailer_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt trailer: {exc}") from exc
    for key in ("instance_ids", "category_ids"):
        if key not in trailer or len(trailer[key]) != count:
            raise FormatError(f"{path}: trailer {key} missing or wrong length")
    matrix = values.astype(np.float64).reshape(count, dim)
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteDataError(f"{path}: payload contains non-finite values")
    return EmbeddingSet(
        matrix=matrix,
        instance_ids=trailer["instance_ids"],
        category_ids=trailer["category_ids"],
        meta=trailer.get("meta", ""),
    )
