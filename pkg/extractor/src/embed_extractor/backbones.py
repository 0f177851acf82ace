"""Feature backbones.

Two families: "pixel" (and "pixel/<edge>") is a dependency-free resize-and-
flatten feature for offline work and plumbing checks; any other name is
treated as a pretrained vision model loaded through transformers, emitting
the [CLS] token by default or mean-pooled patch tokens with features="mean".
Inference always runs in eval mode under no_grad, so the same image gives
the same row on every call.
"""

from __future__ import annotations

import numpy as np
from PIL import Image


class ModelError(RuntimeError):
    """A backbone could not be loaded or run; always fatal."""


class PixelBackbone:
    """Resize to edge*edge RGB and flatten to [0, 1] floats (dim = 3*edge*edge)."""

    def __init__(self, edge: int = 8):
        if edge < 1:
            raise ModelError(f"pixel edge must be positive, got {edge}")
        self.edge = edge

    def embed(self, images: list[Image.Image]) -> np.ndarray:
        rows = []
        for img in images:
            small = img.convert("RGB").resize((self.edge, self.edge), Image.Resampling.BILINEAR)
            rows.append(np.asarray(small, dtype=np.float32).reshape(-1) / 255.0)
        return np.stack(rows)


class PretrainedBackbone:
    """Token features from a transformers vision model (or the vision tower
    of a two-tower model)."""

    def __init__(self, processor, model, features: str = "cls"):
        if features not in ("cls", "mean"):
            raise ModelError(f"features must be 'cls' or 'mean', got {features!r}")
        self.processor = processor
        # two-tower checkpoints (CLIP-style) expose the image side separately
        self.model = getattr(model, "vision_model", model)
        self.features = features
        self.model.eval()

    def embed(self, images: list[Image.Image]) -> np.ndarray:
        import torch

        inputs = self.processor(images=[img.convert("RGB") for img in images], return_tensors="pt")
        with torch.no_grad():
            tokens = self.model(**inputs).last_hidden_state
        if self.features == "cls":
            pooled = tokens[:, 0, :]
        else:
            pooled = tokens[:, 1:, :].mean(dim=1)
        return pooled.to(torch.float32).cpu().numpy()


def load_backbone(name: str, features: str = "cls"):
    """Resolve a model name; fetch failures are fatal by contract."""
    if name == "pixel" or name.startswith("pixel/"):
        edge = 8
        if "/" in name:
            try:
                edge = int(name.split("/", 1)[1])
            except ValueError:
                raise ModelError(f"bad pixel edge in {name!r}") from None
        return PixelBackbone(edge)
    try:
        from transformers import AutoImageProcessor, AutoModel
    except ImportError as exc:
        raise ModelError(f"model {name!r} needs the transformers extra: {exc}") from exc
    try:
        processor = AutoImageProcessor.from_pretrained(name)
        model = AutoModel.from_pretrained(name)
    except Exception as exc:
        raise ModelError(f"could not fetch model {name!r}: {exc}") from exc
    return PretrainedBackbone(processor, model, features)
