"""Image extraction jobs: manifest in, EMBD file out."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .backbones import load_backbone
from .embd import EmbdError, write_embd
from .manifest import ManifestEntry


class ExtractionError(ValueError):
    """The job cannot produce a valid embedding file."""


@dataclass
class ExtractionJob:
    model_name: str
    entries: list[ManifestEntry]
    output_path: str
    batch_size: int = 32
    features: str = "cls"
    skipped: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ExtractionError(f"batch_size must be positive, got {self.batch_size}")
        if not self.entries:
            raise ExtractionError("empty manifest")


def _log_skip(job: ExtractionJob, entry: ManifestEntry, reason: str) -> None:
    job.skipped.append(entry.instance_id)
    print(f"skip {entry.instance_id}: {reason}", file=sys.stderr)


def run_extraction(job: ExtractionJob) -> int:
    """Embed every decodable manifest image and write the EMBD file.

    Undecodable images and degenerate (zero-norm) feature rows are skipped
    with a logged instance id; everything else in the written file is exactly
    the manifest, in order. Returns the number of rows written.
    """
    backbone = load_backbone(job.model_name, job.features)

    decoded: list[tuple[ManifestEntry, Image.Image]] = []
    for entry in job.entries:
        try:
            with Image.open(entry.path) as img:
                decoded.append((entry, img.convert("RGB")))
        except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
            _log_skip(job, entry, f"undecodable image ({exc})")
    if not decoded:
        raise ExtractionError("every manifest image was skipped; nothing to write")

    blocks = []
    for start in range(0, len(decoded), job.batch_size):
        batch = decoded[start : start + job.batch_size]
        blocks.append(np.asarray(backbone.embed([img for _, img in batch]), dtype=np.float32))
    features = np.concatenate(blocks, axis=0)

    keep = np.flatnonzero(np.linalg.norm(features, axis=1) > 0.0)
    for i in range(len(decoded)):
        if i not in keep:
            _log_skip(job, decoded[i][0], "zero-norm feature row")
    if keep.size == 0:
        raise ExtractionError("every feature row was degenerate; nothing to write")

    kept = [decoded[i][0] for i in keep]
    try:
        write_embd(
            features[keep],
            [e.instance_id for e in kept],
            [e.category_id for e in kept],
            job.output_path,
            meta=f"{job.model_name} features",
        )
    except OSError as exc:
        raise ExtractionError(f"cannot write {job.output_path}: {exc}") from exc
    return int(keep.size)
