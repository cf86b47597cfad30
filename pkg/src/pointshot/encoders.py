"""Frozen visual/text encoder backends and prompt templating.

Two interchangeable backends sit behind the same four-method surface:

``toy``
    A deterministic stand-in used by tests and desk-scale runs. The visual
    path block-pools the image to an 8x8x3 grid of channel means, appends a
    constant 1, and applies a fixed seeded Gaussian projection. The text
    path hashes lowercase alphanumeric tokens into 64 buckets with CRC-32
    (stable across processes, unlike the interpreter's salted ``hash``),
    appends a constant 1, and projects the bag-of-tokens vector the same
    way. Same seed, same encoder, bit for bit.

``clip``
    A real pretrained vision-language model loaded from a local directory
    via ``transformers``; nothing is downloaded at runtime.

Encoders are frozen: construction fixes every weight, and no operation in
this module mutates encoder state.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

TEXT_BUCKETS = 64
_POOL_GRID = 8

DEFAULT_PROMPT = "point cloud of a big [CLASS]."


@dataclass(frozen=True)
class PromptTemplate:
    """A text pattern with exactly one literal ``[CLASS]`` placeholder."""

    template: str

    def __post_init__(self):
        if self.template.count("[CLASS]") != 1:
            raise ValidationError(
                f"prompt template must contain exactly one [CLASS] placeholder: "
                f"{self.template!r}"
            )

    def format(self, class_name: str) -> str:
        return self.template.replace("[CLASS]", class_name)


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Scale each row of a 2-D matrix to unit L2 norm. Zero rows are an error."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {matrix.shape}")
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise ValidationError(f"cannot normalize zero row {bad}")
    return matrix / norms[:, None]


class ToyVisualEncoder:
    """Fixed random projection of pooled image statistics."""

    def __init__(self, feature_dim: int, seed: int, input_resolution: int = 64):
        if feature_dim < 4:
            raise ValidationError("feature_dim must be >= 4")
        if input_resolution % _POOL_GRID != 0:
            raise ValidationError(
                f"input_resolution must be a multiple of {_POOL_GRID}"
            )
        self.feature_dim = feature_dim
        self.input_resolution = input_resolution
        self.seed = seed
        n_stats = _POOL_GRID * _POOL_GRID * 3 + 1  # pooled means + constant slot
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((feature_dim, n_stats)) / np.sqrt(n_stats)

    def _stats(self, image: np.ndarray) -> np.ndarray:
        r = self.input_resolution
        if image.shape != (r, r, 3):
            raise ValidationError(
                f"expected image of shape ({r}, {r}, 3), got {image.shape}"
            )
        if image.min() < 0.0 or image.max() > 1.0:
            raise ValidationError("image values must lie in [0, 1]")
        block = r // _POOL_GRID
        pooled = image.reshape(_POOL_GRID, block, _POOL_GRID, block, 3).mean(axis=(1, 3))
        return np.concatenate([pooled.reshape(-1), [1.0]])

    def encode(self, image: np.ndarray) -> np.ndarray:
        return self._projection @ self._stats(np.asarray(image, dtype=np.float64))


_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def _tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


class ToyTextEncoder:
    """Hashed bag-of-tokens followed by a fixed random projection."""

    def __init__(self, feature_dim: int, seed: int):
        if feature_dim < 4:
            raise ValidationError("feature_dim must be >= 4")
        self.feature_dim = feature_dim
        self.seed = seed
        n_stats = TEXT_BUCKETS + 1
        # Offset the seed so visual and text projections never share a stream.
        rng = np.random.default_rng(seed + 7919)
        self._projection = rng.standard_normal((feature_dim, n_stats)) / np.sqrt(n_stats)

    def encode(self, texts: list[str]) -> np.ndarray:
        bags = np.zeros((len(texts), TEXT_BUCKETS + 1), dtype=np.float64)
        for row, text in enumerate(texts):
            for token in _tokenize(text):
                bucket = zlib.crc32(token.encode("utf-8")) % TEXT_BUCKETS
                bags[row, bucket] += 1.0
            bags[row, -1] = 1.0
        return bags @ self._projection.T


def toy_encoder(feature_dim: int = 16, seed: int = 0, input_resolution: int = 64):
    """Build a matched (visual, text) pair of deterministic toy encoders."""
    return (
        ToyVisualEncoder(feature_dim, seed, input_resolution),
        ToyTextEncoder(feature_dim, seed),
    )


def encode_views(encoder, images) -> np.ndarray:
    """Encode M images into an MxC matrix, one row per view, in input order."""
    rows = [np.asarray(encoder.encode(np.asarray(img, dtype=np.float64)), dtype=np.float64)
            for img in images]
    if not rows:
        raise ValidationError("no images to encode")
    return np.stack(rows)


def encode_prompts(encoder, template: PromptTemplate, class_names) -> np.ndarray:
    """Encode one templated prompt per class into a KxC matrix."""
    class_names = list(class_names)
    if not class_names:
        raise ValidationError("no class names to encode")
    prompts = [template.format(name) for name in class_names]
    return np.asarray(encoder.encode(prompts), dtype=np.float64)


class ClipVisualEncoder:
    def __init__(self, model, processor):
        self._model = model
        self._processor = processor
        self.feature_dim = int(model.config.projection_dim)
        self.input_resolution = int(model.config.vision_config.image_size)

    def encode(self, image: np.ndarray) -> np.ndarray:
        return self.encode_batch([image])[0]

    def encode_batch(self, images) -> np.ndarray:
        import torch

        r = self.input_resolution
        pil_images = []
        for image in images:
            arr = np.asarray(image, dtype=np.float64)
            if arr.shape != (r, r, 3):
                raise ValidationError(
                    f"expected image of shape ({r}, {r}, 3), got {arr.shape}"
                )
            from PIL import Image

            pil_images.append(Image.fromarray(np.rint(arr * 255.0).astype(np.uint8)))
        inputs = self._processor(images=pil_images, return_tensors="pt")
        with torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return feats.to(torch.float64).numpy()


class ClipTextEncoder:
    def __init__(self, model, processor):
        self._model = model
        self._processor = processor
        self.feature_dim = int(model.config.projection_dim)

    def encode(self, texts: list[str]) -> np.ndarray:
        import torch

        inputs = self._processor(text=list(texts), return_tensors="pt", padding=True)
        with torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return feats.to(torch.float64).numpy()


def load_clip_backend(weights_path):
    """Load a pretrained CLIP from a local directory. No network access."""
    from pathlib import Path

    path = Path(weights_path)
    if not path.exists():
        raise ValidationError(f"clip_weights_path does not exist: {path}")
    try:
        from transformers import CLIPModel, CLIPProcessor
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise ValidationError(
            "the 'clip' backend requires the transformers package "
            "(pip install 'pointshot[clip]')"
        ) from exc
    model = CLIPModel.from_pretrained(str(path), local_files_only=True)
    model.eval()
    processor = CLIPProcessor.from_pretrained(str(path), local_files_only=True)
    return ClipVisualEncoder(model, processor), ClipTextEncoder(model, processor)


def make_backend(name: str, feature_dim: int = 16, seed: int = 0,
                 input_resolution: int = 64, clip_weights_path=None):
    """Construct the named backend: ``toy`` or ``clip``."""
    if name == "toy":
        return toy_encoder(feature_dim, seed, input_resolution)
    if name == "clip":
        if clip_weights_path is None:
            raise ValidationError("backend 'clip' requires clip_weights_path")
        return load_clip_backend(clip_weights_path)
    raise ValidationError(f"unknown backend {name!r} (expected 'toy' or 'clip')")
