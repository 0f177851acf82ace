"""Signal array conversion: trials-by-features array plus an id list, rows
written as-is. No selection, no normalization; this is a format bridge only,
so any science-bearing transform stays in the consumer where it is audited.
"""

from __future__ import annotations

import numpy as np

from .embd import write_embd
from .manifest import read_ids


class ConvertError(ValueError):
    """The array and id list do not describe a valid embedding set."""


def load_array(path) -> np.ndarray:
    """A .npy file or a plain-text matrix (one row per line)."""
    try:
        if str(path).endswith(".npy"):
            arr = np.load(path)
        else:
            arr = np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConvertError(f"cannot read array {path}: {exc}") from exc
    if arr.ndim != 2:
        raise ConvertError(f"expected a trials-by-features array, got shape {arr.shape}")
    return arr


def convert_signals(array_path, ids_path, output_path) -> tuple[int, int]:
    arr = load_array(array_path)
    instance_ids, category_ids = read_ids(ids_path)
    if len(instance_ids) != arr.shape[0]:
        raise ConvertError(
            f"id list has {len(instance_ids)} entries but array has {arr.shape[0]} rows"
        )
    write_embd(arr, instance_ids, category_ids, output_path, meta=f"converted from {array_path}")
    return arr.shape
