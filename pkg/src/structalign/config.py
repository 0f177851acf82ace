"""Experiment configuration: one strict JSON document.

Unknown keys are errors reported with their full field path, so a typo
in a nested option fails loudly instead of silently using a default.
An experiment names its data either by `paths` to existing embedding
files or by an inline `synth` block; exactly one of the two.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .engine import AlignmentConfig

# task name -> parameter keys the runner accepts for it
EVAL_TASKS = {
    "rdm": {"set", "n_components"},
    "csm": {"set"},
    "silhouette": {"set", "level"},
    "cluster_order": {"set"},
    "one_shot": {"set", "test_set", "trials", "l2", "level"},
    "ood": {"train_set", "test_set", "per_class", "trials"},
    "triplet": {"set", "n_triplets"},
    "nway": {"query_set", "gallery_set", "n", "trials", "distinct_categories"},
    "manifold": {"set", "level", "n_samples", "low", "high"},
}

_PATH_KEYS = {"x_train", "y_train", "x_heldout", "y_heldout", "checkpoint", "out"}
_SYNTH_KEYS = {
    "kind",
    "n_categories",
    "per_category",
    "dim_x",
    "dim_y",
    "noise",
    "seed",
    "heldout_fraction",
    "latent_dim",
    "identical_distortions",
}


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries the field path."""


@dataclass
class ExperimentConfig:
    seed: int = 0
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    paths: dict = field(default_factory=dict)
    # None means "no synth block"; {} means "generate with defaults"
    synth: dict | None = None
    eval_tasks: list = field(default_factory=list)

    def snapshot(self) -> dict:
        """JSON-ready copy recorded into every report."""
        return {
            "seed": self.seed,
            "alignment": dataclasses.asdict(self.alignment),
            "paths": dict(self.paths),
            "synth": None if self.synth is None else dict(self.synth),
            "eval_tasks": [dict(t) for t in self.eval_tasks],
        }


def _expect_mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
    return value


def _check_keys(mapping: dict, allowed: set, path: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"unknown key {where}")


def validate_config(raw: dict) -> ExperimentConfig:
    _expect_mapping(raw, "<root>")
    _check_keys(raw, {"seed", "alignment", "paths", "synth", "eval_tasks"}, "")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed: expected an integer")

    alignment_raw = _expect_mapping(raw.get("alignment", {}), "alignment")
    known = {f.name for f in dataclasses.fields(AlignmentConfig)}
    _check_keys(alignment_raw, known, "alignment")
    try:
        alignment = AlignmentConfig(**alignment_raw)
        alignment.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"alignment: {exc}") from exc

    paths = _expect_mapping(raw.get("paths", {}), "paths")
    _check_keys(paths, _PATH_KEYS, "paths")
    for key, value in paths.items():
        if not isinstance(value, str):
            raise ConfigError(f"paths.{key}: expected a string path")

    synth = None
    if "synth" in raw:
        synth = _expect_mapping(raw["synth"], "synth")
        _check_keys(synth, _SYNTH_KEYS, "synth")

    tasks_raw = raw.get("eval_tasks", [])
    if not isinstance(tasks_raw, list):
        raise ConfigError("eval_tasks: expected a list")
    tasks = []
    for i, task in enumerate(tasks_raw):
        task = _expect_mapping(task, f"eval_tasks[{i}]")
        name = task.get("task")
        if name not in EVAL_TASKS:
            raise ConfigError(
                f"eval_tasks[{i}].task: unknown task {name!r}; known: {sorted(EVAL_TASKS)}"
            )
        _check_keys(task, EVAL_TASKS[name] | {"task"}, f"eval_tasks[{i}]")
        tasks.append(dict(task))

    return ExperimentConfig(
        seed=seed, alignment=alignment, paths=paths, synth=synth, eval_tasks=tasks
    )


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
    return validate_config(raw)
