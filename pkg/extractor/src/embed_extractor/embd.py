"""EMBD file writing (and reading, for verification).

The layout is the consumer's contract, byte for byte: little-endian magic
"EMBD", version u16 = 1, flags u16 = 0, count u32, dim u32, count*dim
float32 values row-major, then a u32-length-prefixed UTF-8 JSON trailer
with instance_ids, category_ids, and a free-form meta string. Anything the
consumer would reject (duplicate ids, zero-norm or non-finite rows, empty
files) is refused at write time so a written file is always loadable.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"EMBD"
VERSION = 1
_HEADER = struct.Struct("<4sHHII")
_TRAILER_LEN = struct.Struct("<I")


class EmbdError(ValueError):
    """Problem producing or reading an embedding file."""


def write_embd(matrix, instance_ids, category_ids, path, meta: str = "") -> None:
    data = np.ascontiguousarray(np.asarray(matrix), dtype="<f4")
    instance_ids = [str(s) for s in instance_ids]
    category_ids = [str(s) for s in category_ids]
    if data.ndim != 2 or data.shape[0] < 1:
        raise EmbdError(f"matrix must be 2-D with at least one row, got shape {data.shape}")
    count, dim = data.shape
    if len(instance_ids) != count or len(category_ids) != count:
        raise EmbdError("instance_ids and category_ids must have one entry per row")
    if len(set(instance_ids)) != count:
        raise EmbdError("instance_ids must be unique")
    if not np.all(np.isfinite(data)):
        raise EmbdError("matrix contains non-finite values")
    zero = np.flatnonzero(np.linalg.norm(data, axis=1) == 0.0)
    if zero.size:
        raise EmbdError(f"zero-norm rows for instances {[instance_ids[i] for i in zero]}")
    trailer = json.dumps(
        {"instance_ids": instance_ids, "category_ids": category_ids, "meta": meta}
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, 0, count, dim))
        fh.write(data.tobytes(order="C"))
        fh.write(_TRAILER_LEN.pack(len(trailer)))
        fh.write(trailer)


def read_embd(path) -> tuple[np.ndarray, list[str], list[str], str]:
    """Read back a file this module wrote: (float32 matrix, instance ids, category ids, meta)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size or not blob.startswith(MAGIC):
        raise EmbdError(f"{path}: not an EMBD file")
    _, version, flags, count, dim = _HEADER.unpack_from(blob, 0)
    if version != VERSION or flags != 0:
        raise EmbdError(f"{path}: unsupported version {version} / flags {flags:#x}")
    offset = _HEADER.size
    need = count * dim * 4
    if len(blob) < offset + need + _TRAILER_LEN.size:
        raise EmbdError(f"{path}: truncated payload")
    values = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=offset)
    offset += need
    (trailer_len,) = _TRAILER_LEN.unpack_from(blob, offset)
    offset += _TRAILER_LEN.size
    trailer = json.loads(blob[offset : offset + trailer_len].decode("utf-8"))
    return (
        values.reshape(count, dim).copy(),
        list(trailer["instance_ids"]),
        list(trailer["category_ids"]),
        trailer.get("meta", ""),
    )
