"""Cross-package acceptance: extractor output feeding the alignment trainer.

The consumer is touched only through its public surface, the EMBD format
loader and the structalign command line.
"""

import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from embed_extractor.cli import main as extractor_main

structalign_data = pytest.importorskip("structalign.data")


def _verdict(label: str, failures: list) -> None:
    print(f"{'FAIL' if failures else 'PASS'}: {label}")
    assert not failures, f"{label}: " + "; ".join(failures)


@pytest.fixture()
def corpus(tmp_path):
    rng = np.random.default_rng(7)
    names = ["inst_r", "inst_g", "inst_b"]
    for i, name in enumerate(names):
        arr = rng.integers(0, 255, size=(32, 32, 3), dtype=np.uint8)
        arr[:, :, i] = 255
        Image.fromarray(arr).save(tmp_path / f"{name}.png")
    (tmp_path / "manifest.csv").write_text(
        "path,instance_id,category_id\n"
        + "".join(f"{tmp_path}/{n}.png,{n},cat{i}\n" for i, n in enumerate(names)),
        encoding="utf-8",
    )
    np.save(tmp_path / "signals.npy", rng.normal(size=(3, 8)).astype(np.float32))
    (tmp_path / "ids.csv").write_text(
        "instance_id,category_id\n" + "".join(f"{n},cat{i}\n" for i, n in enumerate(names)),
        encoding="utf-8",
    )
    return tmp_path


def test_extract_and_convert_outputs_load_in_the_consumer(corpus):
    failures = []
    x_path, y_path = corpus / "x.embd", corpus / "y.embd"
    assert extractor_main(
        ["extract", "--model", "pixel/4", "--manifest", str(corpus / "manifest.csv"),
         "--out", str(x_path)]
    ) == 0
    assert extractor_main(
        ["convert", "--array", str(corpus / "signals.npy"), "--ids", str(corpus / "ids.csv"),
         "--out", str(y_path)]
    ) == 0

    x = structalign_data.load_embeddings(x_path)
    if (x.count, x.dim) != (3, 48):
        failures.append(f"extract count/dim {(x.count, x.dim)} != (3, 48)")
    if x.instance_ids != ["inst_r", "inst_g", "inst_b"]:
        failures.append(f"extract instance ids {x.instance_ids}")
    if x.category_ids != ["cat0", "cat1", "cat2"]:
        failures.append(f"extract category ids {x.category_ids}")

    y = structalign_data.load_embeddings(y_path)
    signals = np.load(corpus / "signals.npy")
    if (y.count, y.dim) != (3, 8):
        failures.append(f"convert count/dim {(y.count, y.dim)} != (3, 8)")
    if y.instance_ids != x.instance_ids or y.category_ids != x.category_ids:
        failures.append("convert ids do not match the manifest ids")
    if not np.array_equal(y.matrix.astype(np.float32), signals):
        failures.append("convert payload not preserved bit-exactly")

    _verdict("format bridge: consumer loads both files with ids and shapes intact", failures)


def test_three_image_extract_then_align_smoke_run(corpus):
    failures = []
    for side, args in (
        ("x", ["extract", "--model", "pixel/4", "--manifest", str(corpus / "manifest.csv")]),
        ("y", ["convert", "--array", str(corpus / "signals.npy"), "--ids", str(corpus / "ids.csv")]),
    ):
        assert extractor_main(args + ["--out", str(corpus / f"{side}.embd")]) == 0

    config = {
        "seed": 1,
        "paths": {
            "x_train": str(corpus / "x.embd"),
            "y_train": str(corpus / "y.embd"),
            "x_heldout": str(corpus / "x.embd"),
            "y_heldout": str(corpus / "y.embd"),
        },
        "alignment": {
            "lr": 0.001, "epochs": 1, "batch_size": 3, "k1": 2, "k2": 2,
            "structures_per_batch": 1, "latent_dim": 4, "encoder_hidden": [8],
            "refiner_layers": 1, "refiner_heads": 2,
        },
    }
    (corpus / "align.json").write_text(json.dumps(config), encoding="utf-8")
    proc = subprocess.run(
        [sys.executable, "-m", "structalign.cli", "align",
         "--config", str(corpus / "align.json"), "--out", str(corpus / "run")],
        capture_output=True, text=True,
    )
    if proc.returncode != 0:
        failures.append(f"align exited {proc.returncode}: {proc.stderr.strip()}")
    else:
        payload = json.loads(proc.stdout)
        if payload["epochs"] != 1 or not np.isfinite(payload["gw_train"]):
            failures.append(f"align payload off: {payload}")
        if not (corpus / "run" / "model.npz").exists():
            failures.append("no trained checkpoint written")

    _verdict("smoke run: three extracted images align end to end", failures)
