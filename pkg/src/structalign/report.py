"""Run reports: line-delimited JSON with binary sidecars.

A report is a config record followed by per-step metric records. Every
record carries the step index and seed. Matrices are spilled to .npy
sidecar files next to the report and referenced by relative path, so
the JSONL itself stays line-oriented and diffable. Nothing in a report
depends on wall-clock time; identical config and seed produce identical
bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ReportError(ValueError):
    """Malformed report or record."""


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def make_run_id(config: dict, seed: int) -> str:
    digest = hashlib.sha256(_canonical({"config": config, "seed": seed}).encode())
    return digest.hexdigest()[:16]


@dataclass
class MetricsReport:
    run_id: str
    seed: int
    config: dict
    records: list[dict] = field(default_factory=list)

    @classmethod
    def start(cls, config: dict, seed: int) -> "MetricsReport":
        return cls(run_id=make_run_id(config, seed), seed=seed, config=config)

    def add(self, step: int, **metrics) -> dict:
        record = {"step": int(step), "seed": self.seed}
        for key, value in metrics.items():
            if key in record:
                raise ReportError(f"metric name {key!r} is reserved")
            record[key] = value
        self.records.append(record)
        return record


def write_report(report: MetricsReport, out_dir, name: str = "report") -> Path:
    """Serialize to <out_dir>/<name>.jsonl, spilling arrays to sidecars."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.jsonl"
    lines = [
        _canonical(
            {
                "kind": "config",
                "run_id": report.run_id,
                "seed": report.seed,
                "config": report.config,
            }
        )
    ]
    for i, record in enumerate(report.records):
        if "step" not in record or "seed" not in record:
            raise ReportError(f"record {i} lacks step or seed")
        flat = {"kind": "record"}
        for key, value in record.items():
            if isinstance(value, np.ndarray):
                side = f"{name}_{report.run_id}_{i:04d}_{key}.npy"
                np.save(out / side, value)
                flat[key] = {"$matrix": side}
            elif isinstance(value, (np.floating, np.integer)):
                flat[key] = value.item()
            else:
                flat[key] = value
        lines.append(_canonical(flat))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_report(path) -> MetricsReport:
    """Load a report; matrix references are resolved back to arrays."""
    path = Path(path)
    base = path.parent
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ReportError(f"{path}: empty report")
    head = json.loads(lines[0])
    if head.get("kind") != "config":
        raise ReportError(f"{path}: first record must be the config snapshot")
    report = MetricsReport(
        run_id=head["run_id"], seed=head["seed"], config=head["config"]
    )
    for line in lines[1:]:
        raw = json.loads(line)
        if raw.pop("kind", None) != "record":
            raise ReportError(f"{path}: unexpected record kind")
        for key, value in raw.items():
            if isinstance(value, dict) and "$matrix" in value:
                raw[key] = np.load(base / value["$matrix"])
        report.records.append(raw)
    return report
