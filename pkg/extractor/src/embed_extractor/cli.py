"""Command line front end."""

from __future__ import annotations

import argparse
import json
import sys

from .convert import convert_signals
from .embd import read_embd
from .extract import ExtractionJob, run_extraction
from .manifest import read_manifest


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _cmd_extract(args) -> int:
    job = ExtractionJob(
        model_name=args.model,
        entries=read_manifest(args.manifest),
        output_path=args.out,
        batch_size=args.batch_size,
        features=args.features,
    )
    count = run_extraction(job)
    matrix, _, _, _ = read_embd(args.out)
    _emit({"written": args.out, "count": count, "dim": matrix.shape[1], "skipped": job.skipped})
    return 0


def _cmd_convert(args) -> int:
    count, dim = convert_signals(args.array, args.ids, args.out)
    _emit({"written": args.out, "count": int(count), "dim": int(dim)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-extractor",
        description="Extract model embeddings or convert signal arrays to EMBD files",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    extract = sub.add_parser("extract", help="embed manifest images with a vision backbone")
    extract.add_argument("--model", required=True, help="backbone name (pixel, pixel/N, or a transformers id)")
    extract.add_argument("--manifest", required=True, help="CSV with columns path,instance_id,category_id")
    extract.add_argument("--out", required=True, help="output .embd file")
    extract.add_argument("--batch-size", type=int, default=32)
    extract.add_argument("--features", choices=("cls", "mean"), default="cls",
                         help="token pooling for pretrained models (ignored by pixel)")
    extract.set_defaults(func=_cmd_extract)

    convert = sub.add_parser("convert", help="wrap a trials-by-features array as an EMBD file")
    convert.add_argument("--array", required=True, help=".npy file or plain-text matrix")
    convert.add_argument("--ids", required=True, help="CSV with columns instance_id,category_id")
    convert.add_argument("--out", required=True, help="output .embd file")
    convert.set_defaults(func=_cmd_convert)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}, sort_keys=True),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
