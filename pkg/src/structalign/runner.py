"""Experiment execution: data resolution, training runs, eval runs.

run_align trains a model over the configured epochs, tracking the
train/held-out GW distances and joint silhouettes every epoch, and
checkpoints both the untrained and final model so downstream probes can
compare against the untrained baseline. run_eval executes the
configured eval tasks against raw embedding files or against a
checkpoint's latents.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from . import engine, evals, ot, synth
from .config import ConfigError, ExperimentConfig
from .data import EmbeddingSet, load_embeddings, save_embeddings
from .engine import AlignmentModel
from .report import MetricsReport, write_report

_SET_KEYS = ("x_train", "y_train", "x_heldout", "y_heldout")


def resolve_data(cfg: ExperimentConfig) -> dict[str, EmbeddingSet]:
    """Load the four experiment sets from paths or generate them inline."""
    if cfg.synth is not None and any(k in cfg.paths for k in _SET_KEYS):
        raise ConfigError("give either synth or paths.x_train..., not both")
    if cfg.synth is not None:
        params = dict(cfg.synth)
        kind = params.pop("kind", "isomorphic_clusters")
        params.setdefault("seed", cfg.seed)
        xt, yt, xh, yh = synth.make(kind, **params)
        return {"x_train": xt, "y_train": yt, "x_heldout": xh, "y_heldout": yh}
    missing = [k for k in _SET_KEYS if k not in cfg.paths]
    if missing:
        raise ConfigError(f"paths missing {missing} (or provide a synth block)")
    out = {}
    for key in _SET_KEYS:
        path = Path(cfg.paths[key])
        if not path.exists():
            raise ConfigError(f"paths.{key}: no such file {path}")
        out[key] = load_embeddings(path)
    return out


def joint_silhouette(model: AlignmentModel, x_set, y_set) -> float:
    """Silhouette of both domains' latents stacked in one space."""
    xl = engine.encode(model.signal_encoder, model.scoped("sig"), x_set.matrix).data
    yl = engine.encode(model.image_encoder, model.scoped("img"), y_set.matrix).data
    labels = list(x_set.category_ids) + list(y_set.category_ids)
    return evals.silhouette(np.vstack([xl, yl]), labels)


def run_align(cfg: ExperimentConfig, out_dir) -> tuple[MetricsReport, AlignmentModel]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sets = resolve_data(cfg)
    acfg = dataclasses.replace(cfg.alignment, seed=cfg.seed)
    acfg.validate()
    xt, yt = sets["x_train"], sets["y_train"]
    xh, yh = sets["x_heldout"], sets["y_heldout"]

    model = engine.init_model(xt.dim, yt.dim, acfg)
    engine.save_model(model, out / "model_init.npz")

    report = MetricsReport.start(cfg.snapshot(), cfg.seed)
    series = engine.track_alignment(model, (xt, yt), (xh, yh))
    report.add(
        step=0,
        epoch=0,
        gw_train=series[-1].gw_train,
        gw_heldout=series[-1].gw_heldout,
        sc_train=joint_silhouette(model, xt, yt),
        sc_heldout=joint_silhouette(model, xh, yh),
    )
    for _ in range(acfg.epochs):
        metrics = engine.train_epoch(model, xt, yt, acfg)
        series = engine.track_alignment(model, (xt, yt), (xh, yh), series)
        report.add(
            step=model.step_counter,
            epoch=metrics.epoch,
            loss_w=metrics.loss_w,
            loss_gw=metrics.loss_gw,
            gw_train=series[-1].gw_train,
            gw_heldout=series[-1].gw_heldout,
            sc_train=joint_silhouette(model, xt, yt),
            sc_heldout=joint_silhouette(model, xh, yh),
            mean_true_count=metrics.mean_true_count,
        )
    engine.save_model(model, out / "model.npz")
    write_report(report, out, name="report")
    return report, model


# ------------------------------------------------------------------- eval


def _superclass_labels(embeddings: EmbeddingSet) -> list[str]:
    labels = [synth.superclass_of(c) for c in embeddings.category_ids]
    if len(set(labels)) < 2:
        raise ConfigError(
            "superclass level needs category ids with distinct 'g<k>/' prefixes"
        )
    return labels


def _labels(embeddings: EmbeddingSet, level: str) -> list[str]:
    if level == "category":
        return list(embeddings.category_ids)
    if level == "superclass":
        return _superclass_labels(embeddings)
    raise ConfigError(f"unknown level {level!r} (category or superclass)")


def _encode_sets(model: AlignmentModel, sets: dict) -> dict[str, EmbeddingSet]:
    encoded = {}
    for key, es in sets.items():
        spec, scope = (
            (model.signal_encoder, "sig") if key.startswith("x") else (model.image_encoder, "img")
        )
        latents = engine.encode(spec, model.scoped(scope), es.matrix).data
        encoded[key] = EmbeddingSet(
            matrix=latents,
            instance_ids=es.instance_ids,
            category_ids=es.category_ids,
            meta=es.meta + " (encoded)",
        )
    return encoded


def _pick(sets: dict, name: str, what: str) -> EmbeddingSet:
    if name not in sets:
        raise ConfigError(f"{what}: unknown set {name!r}; have {sorted(sets)}")
    return sets[name]


def run_eval(cfg: ExperimentConfig, checkpoint=None) -> MetricsReport:
    sets = resolve_data(cfg)
    if checkpoint is not None:
        model = engine.load_model(checkpoint)
        if model.signal_encoder.input_dim != sets["x_train"].dim:
            raise ConfigError(
                f"checkpoint expects x dim {model.signal_encoder.input_dim}, "
                f"data has {sets['x_train'].dim}"
            )
        sets = _encode_sets(model, sets)
    report = MetricsReport.start(cfg.snapshot(), cfg.seed)
    for i, task in enumerate(cfg.eval_tasks):
        params = dict(task)
        name = params.pop("task")
        record = _run_task(name, params, sets, cfg.seed)
        report.add(step=i, task=name, **record)
    return report


def _run_task(name: str, params: dict, sets: dict, seed: int) -> dict:
    if name == "rdm":
        es = _pick(sets, params.pop("set", "x_train"), "rdm.set")
        dm = evals.compute_rdm(es, n_components=params.pop("n_components", 8))
        _done(params, "rdm")
        out = {"values": dm.values, "labels": dm.row_labels}
        if dm.warning:
            out["warning"] = dm.warning
        return out
    if name == "csm":
        es = _pick(sets, params.pop("set", "x_train"), "csm.set")
        dm = evals.compute_csm(es)
        _done(params, "csm")
        return {"values": dm.values, "labels": dm.row_labels}
    if name == "silhouette":
        es = _pick(sets, params.pop("set", "x_train"), "silhouette.set")
        labels = _labels(es, params.pop("level", "category"))
        _done(params, "silhouette")
        return {"value": evals.silhouette(es.matrix, labels)}
    if name == "cluster_order":
        es = _pick(sets, params.pop("set", "x_train"), "cluster_order.set")
        _done(params, "cluster_order")
        return {"order": evals.cluster_order(evals.compute_csm(es))}
    if name == "one_shot":
        es = _pick(sets, params.pop("set", "x_heldout"), "one_shot.set")
        level = params.pop("level", "category")
        pool = EmbeddingSet(es.matrix, es.instance_ids, _labels(es, level), es.meta)
        test_name = params.pop("test_set", None)
        test_pool = None
        if test_name is not None:
            # exemplars come from one set, scoring happens on the other;
            # with x vs y latents this measures cross-domain transfer
            ts = _pick(sets, test_name, "one_shot.test_set")
            test_pool = EmbeddingSet(ts.matrix, ts.instance_ids, _labels(ts, level), ts.meta)
        res = evals.one_shot_probe(
            pool,
            test=test_pool,
            l2=params.pop("l2", 1.0),
            trials=params.pop("trials", 100),
            seed=seed,
        )
        _done(params, "one_shot")
        return {"accuracy": res.accuracy, "n_trials": res.n_trials, "level": level}
    if name == "ood":
        train = _pick(sets, params.pop("train_set", "x_train"), "ood.train_set")
        test = _pick(sets, params.pop("test_set", "x_heldout"), "ood.test_set")
        targets = {
            c: int(synth.superclass_of(c)[1:])
            for c in set(train.category_ids) | set(test.category_ids)
        }
        res = evals.ood_probe(
            train,
            test,
            targets,
            per_class=params.pop("per_class", 5),
            trials=params.pop("trials", 100),
            seed=seed,
        )
        _done(params, "ood")
        return {"accuracy": res.accuracy, "n_trials": res.n_trials}
    if name == "triplet":
        es = _pick(sets, params.pop("set", "x_train"), "triplet.set")
        n = params.pop("n_triplets", 1000)
        rng = np.random.default_rng(seed)
        triplets = []
        for _ in range(n):
            i, j, k = (int(v) for v in rng.choice(es.count, size=3, replace=False))
            triplets.append((i, j, k, [i, j, k][rng.integers(3)]))
        res = evals.triplet_odd_one_out(es.matrix, triplets)
        _done(params, "triplet")
        return {"accuracy": res.accuracy, "n_trials": res.n_trials}
    if name == "nway":
        queries = _pick(sets, params.pop("query_set", "x_heldout"), "nway.query_set")
        gallery = _pick(sets, params.pop("gallery_set", "y_heldout"), "nway.gallery_set")
        res = evals.nway_retrieval(
            queries.matrix,
            gallery,
            n=params.pop("n", 2),
            trials=params.pop("trials", 500),
            distinct_categories=params.pop("distinct_categories", False),
            seed=seed,
        )
        _done(params, "nway")
        return {"accuracy": res.accuracy, "n_trials": res.n_trials}
    if name == "manifold":
        es = _pick(sets, params.pop("set", "x_train"), "manifold.set")
        level = params.pop("level", "category")
        labels = {c: synth.superclass_of(c) for c in set(es.category_ids)} if (
            level == "superclass"
        ) else {c: c for c in set(es.category_ids)}
        model = evals.pca_fit(es.matrix, 2)
        res = evals.manifold_consistency(
            model,
            es,
            labels,
            n_samples=params.pop("n_samples", 1000),
            low=params.pop("low", -5.0),
            high=params.pop("high", 5.0),
            seed=seed,
        )
        _done(params, "manifold")
        return {
            "accuracy": res.accuracy,
            "n_trials": res.n_trials,
            "mean_similarity": res.mean_similarity,
        }
    raise ConfigError(f"unknown eval task {name!r}")


def _done(params: dict, task: str) -> None:
    if params:
        raise ConfigError(f"{task}: unknown parameters {sorted(params)}")


def write_synth(cfg: ExperimentConfig, out_dir) -> list[Path]:
    """Generate the configured benchmark and write the four .embd files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = dict(cfg.synth or {})
    kind = params.pop("kind", "isomorphic_clusters")
    params.setdefault("seed", cfg.seed)
    xt, yt, xh, yh = synth.make(kind, **params)
    written = []
    for key, es in (
        ("x_train", xt),
        ("y_train", yt),
        ("x_heldout", xh),
        ("y_heldout", yh),
    ):
        path = out / f"{key}.embd"
        save_embeddings(es, path)
        written.append(path)
    return written
