"""CSV inputs: image manifests and signal id lists."""

from __future__ import annotations

import csv
from dataclasses import dataclass


class ManifestError(ValueError):
    """Malformed or inconsistent CSV input."""


@dataclass
class ManifestEntry:
    path: str
    instance_id: str
    category_id: str


_MANIFEST_COLUMNS = ["path", "instance_id", "category_id"]
_IDS_COLUMNS = ["instance_id", "category_id"]


def _read_rows(path, columns: list[str]) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != columns:
            raise ManifestError(
                f"{path}: expected columns {columns}, got {reader.fieldnames}"
            )
        rows = list(reader)
    if not rows:
        raise ManifestError(f"{path}: no data rows")
    for i, row in enumerate(rows):
        if any(v is None or v == "" for v in row.values()):
            raise ManifestError(f"{path}: row {i + 1} has empty fields")
    return rows


def _require_unique(ids: list[str], path) -> None:
    seen = set()
    for s in ids:
        if s in seen:
            raise ManifestError(f"{path}: duplicate instance_id {s!r}")
        seen.add(s)


def read_manifest(path) -> list[ManifestEntry]:
    rows = _read_rows(path, _MANIFEST_COLUMNS)
    entries = [ManifestEntry(r["path"], r["instance_id"], r["category_id"]) for r in rows]
    _require_unique([e.instance_id for e in entries], path)
    return entries


def read_ids(path) -> tuple[list[str], list[str]]:
    rows = _read_rows(path, _IDS_COLUMNS)
    instance_ids = [r["instance_id"] for r in rows]
    _require_unique(instance_ids, path)
    return instance_ids, [r["category_id"] for r in rows]
