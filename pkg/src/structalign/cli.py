"""Command line front end.

Subcommands: `synth` writes a generated benchmark to disk, `align`
trains a model and leaves a report plus checkpoints in the output
directory, `eval` runs the configured eval tasks, and `ot
sinkhorn`/`ot gw` solve one-off transport problems between two
embedding files. Every failure exits nonzero with a single JSON line on
stderr so callers can script against it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import ot, runner
from .config import ConfigError, ExperimentConfig, load_config
from .data import load_embeddings
from .report import write_report


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out or cfg.paths.get("out")
    if out is None:
        raise ConfigError("no output directory (pass --out or set paths.out)")
    return Path(out)


def _cmd_synth(args) -> int:
    cfg = _load(args)
    written = runner.write_synth(cfg, _out_dir(args, cfg))
    print(json.dumps({"written": [str(p) for p in written]}, sort_keys=True))
    return 0


def _cmd_align(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    report, _ = runner.run_align(cfg, out)
    last = report.records[-1]
    print(
        json.dumps(
            {
                "out": str(out),
                "run_id": report.run_id,
                "epochs": len(report.records) - 1,
                "gw_train": last["gw_train"],
                "gw_heldout": last["gw_heldout"],
            },
            sort_keys=True,
        )
    )
    return 0


def _cmd_eval(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    checkpoint = args.checkpoint or cfg.paths.get("checkpoint")
    report = runner.run_eval(cfg, checkpoint=checkpoint)
    path = write_report(report, out, name="eval_report")
    print(
        json.dumps(
            {"out": str(path), "run_id": report.run_id, "records": len(report.records)},
            sort_keys=True,
        )
    )
    return 0


def _save_plan(out, plan: np.ndarray) -> None:
    if out is None:
        return
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    np.save(outdir / "plan.npy", plan)


def _cmd_ot_sinkhorn(args) -> int:
    x = load_embeddings(args.x)
    y = load_embeddings(args.y)
    problem = ot.TransportProblem(
        cost=ot.cosine_cost_matrix(x.matrix, y.matrix),
        mu=ot.uniform_weights(x.count),
        nu=ot.uniform_weights(y.count),
        epsilon=args.epsilon,
    )
    result = ot.sinkhorn(problem, iterations=args.iterations)
    _save_plan(args.out, result.plan)
    print(
        json.dumps(
            {
                "value": result.value,
                "residual": result.residual,
                "iterations": result.iterations,
            },
            sort_keys=True,
        )
    )
    return 0


def _cmd_ot_gw(args) -> int:
    x = load_embeddings(args.x)
    y = load_embeddings(args.y)
    result = ot.entropic_gw(
        ot.self_similarity(x.matrix),
        ot.self_similarity(y.matrix),
        epsilon=args.epsilon,
    )
    _save_plan(args.out, result.plan)
    print(
        json.dumps(
            {
                "value": result.value,
                "converged": result.converged,
                "outer_iterations": result.outer_iterations,
                "residual": result.residual,
            },
            sort_keys=True,
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="structalign",
        description="structural alignment of embedding spaces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic benchmark")
    common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("align", help="train an alignment model")
    common(p, config_required=True)
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("eval", help="run eval tasks against embeddings or a checkpoint")
    common(p, config_required=True)
    p.add_argument("--checkpoint", default=None, help="model checkpoint (.npz)")
    p.set_defaults(func=_cmd_eval)

    p_ot = sub.add_parser("ot", help="one-off transport solves")
    ot_sub = p_ot.add_subparsers(dest="solver", required=True)

    p = ot_sub.add_parser("sinkhorn", help="entropic OT between two embedding files")
    p.add_argument("--x", required=True, help="query-side .embd file")
    p.add_argument("--y", required=True, help="target-side .embd file")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--out", default=None, help="directory for plan.npy")
    p.set_defaults(func=_cmd_ot_sinkhorn)

    p = ot_sub.add_parser("gw", help="entropic GW between two embedding files")
    p.add_argument("--x", required=True, help="query-side .embd file")
    p.add_argument("--y", required=True, help="target-side .embd file")
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--out", default=None, help="directory for plan.npy")
    p.set_defaults(func=_cmd_ot_gw)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        line = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(line, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
