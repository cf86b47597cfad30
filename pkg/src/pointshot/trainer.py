"""Few-shot adapter training over a frozen projection/translation/encoder stack.

Everything upstream of the head is frozen, so per-cloud view features are
extracted once and cached; each training epoch is then a handful of small
matrix products. Feature extraction composes, in exactly this order:

    project_views -> depth_to_encoder_image -> translator_forward
        -> encode_views -> normalize_rows

(with ``translator_forward`` skipped when translation is ablated away).
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .containers import load_container, save_container, sha256_arrays
from .dataset import LabeledDataset, PointCloud
from .encoders import PromptTemplate, encode_prompts, encode_views, make_backend, normalize_rows
from .errors import TrainingDivergedError, ValidationError
from .heads import (
    ADAPTER_MODES,
    InterViewAdapterParams,
    ViewpointAdapterParams,
    classify,
    init_interview_params,
    init_viewpoint_params,
    interview_adapter_forward,
    interview_summed_logits_t,
    uniform_view_weights,
    viewpoint_summed_logits_t,
    zero_shot_logits,
)
from .projection import ProjectionConfig, depth_to_encoder_image, project_views
from .translator import Translator, TranslatorConfig, translator_forward

HEAD_TYPES = ("viewpoint", "interview", "zero_shot")


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "adamw"
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("adam", "adamw"):
            raise ValidationError(
                f"algorithm must be 'adam' or 'adamw', got {self.algorithm!r}"
            )
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }


# Desk-scale translator recipe: plain Adam, no decay, hot enough to overfit
# a small corpus within a few hundred steps. The full-scale recipe
# (lr 1e-3, weight decay 1e-4, batch 16 at 224x224) is slower and cooler.
PRETRAIN_DEFAULTS = OptimizerConfig(
    algorithm="adam", learning_rate=3e-3, weight_decay=0.0, batch_size=16
)
# Desk-scale adapter recipe. At 1e-3 the near-zero-shot initialization
# barely moves within 100 epochs on toy features; 2e-2 reaches a
# 100%-train-accuracy overfit on the desk fixture comfortably.
FEWSHOT_DEFAULTS = OptimizerConfig(algorithm="adamw", learning_rate=2e-2, batch_size=32)
FULL_SCALE_PRETRAIN = OptimizerConfig(
    algorithm="adam", learning_rate=1e-3, weight_decay=1e-4, epochs=100, batch_size=16
)


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------

def _features_from_depth(depth_maps: np.ndarray, translator, visual_encoder,
                         translate: bool) -> np.ndarray:
    images = np.stack(
        [depth_to_encoder_image(m, visual_encoder.input_resolution) for m in depth_maps]
    )
    if translate:
        if translator is None:
            raise ValidationError("translate=True requires a translator")
        images = translator_forward(translator, images)
    feats = encode_views(visual_encoder, images)
    return normalize_rows(feats)


def extract_features(cloud: PointCloud, projection: ProjectionConfig, translator,
                     visual_encoder, translate: bool = True) -> np.ndarray:
    """Unit-row MxC view-feature matrix for one normalized cloud."""
    depth = project_views(cloud, projection)
    return _features_from_depth(depth.maps, translator, visual_encoder, translate)


def extract_features_dataset(dataset: LabeledDataset, projection: ProjectionConfig,
                             translator, visual_encoder, translate: bool = True,
                             with_depth_hash: bool = False):
    """Feature matrices for every cloud, stacked (N, M, C).

    With ``with_depth_hash`` also returns a SHA-256 over the raw depth-map
    stack — the translation ablation uses it to show both arms consumed
    bit-identical renders.
    """
    feats = []
    hasher = hashlib.sha256()
    for cloud in dataset.clouds:
        depth = project_views(cloud, projection)
        if with_depth_hash:
            hasher.update(np.ascontiguousarray(depth.maps).tobytes())
        feats.append(_features_from_depth(depth.maps, translator, visual_encoder, translate))
    stacked = np.stack(feats) if feats else np.zeros((0, len(projection.views), 1))
    if with_depth_hash:
        return stacked, hasher.hexdigest()
    return stacked


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """-log(probs[label]); infinite when the labeled class has probability 0."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise ValidationError(f"probs must be 1-D, got shape {probs.shape}")
    if not 0 <= label < probs.shape[0]:
        raise ValidationError(f"label {label} out of range for {probs.shape[0]} classes")
    p = probs[label]
    return float(-np.log(p)) if p > 0 else float("inf")


# ---------------------------------------------------------------------------
# Trained bundle
# ---------------------------------------------------------------------------

@dataclass
class TrainedBundle:
    """An adapter head plus frozen references sufficient to evaluate it.

    ``head_type`` is one of ``viewpoint`` / ``interview`` / ``zero_shot``
    (the last carries no trainable params and predicts with the plain
    weighted cosine head).
    """

    head_type: str
    mode: str
    params: object  # ViewpointAdapterParams | InterViewAdapterParams | None
    alpha: np.ndarray
    prompt: str
    class_names: tuple[str, ...]
    text_features: np.ndarray
    projection: ProjectionConfig
    translator: Translator | None
    visual_encoder: object
    backend: dict
    temperature: float = 1.0
    translate: bool = True
    seed: int = 0
    training_log: list = field(default_factory=list)
    frozen_hash: str = ""
    dataset_fingerprint: str = ""

    def predict_probs(self, view_feats: np.ndarray) -> np.ndarray:
        if self.head_type == "viewpoint":
            return classify(self.params, view_feats, self.text_features, self.temperature)
        if self.head_type == "interview":
            return interview_adapter_forward(
                self.params, view_feats, self.text_features, self.alpha, self.temperature
            )
        _, probs = zero_shot_logits(
            view_feats, self.text_features, self.alpha, self.temperature
        )
        return probs

    def extract(self, cloud: PointCloud) -> np.ndarray:
        return extract_features(
            cloud, self.projection, self.translator, self.visual_encoder, self.translate
        )


def frozen_components_hash(translator, text_features: np.ndarray,
                           projection: ProjectionConfig, backend: dict) -> str:
    """Fingerprint of everything train_few_shot must leave untouched."""
    arrays = {"text_features": np.asarray(text_features, dtype=np.float64)}
    if translator is not None:
        arrays["translator_params"] = translator.flatten_params()
    h = hashlib.sha256()
    h.update(sha256_arrays(arrays).encode())
    h.update(repr(sorted(projection.to_dict().items())).encode())
    h.update(repr(sorted(backend.items())).encode())
    return h.hexdigest()


def dataset_fingerprint(dataset: LabeledDataset) -> str:
    h = hashlib.sha256()
    h.update(repr(dataset.class_names).encode())
    for cloud in dataset.clouds:
        h.update(np.int64(cloud.label).tobytes())
        h.update(np.ascontiguousarray(cloud.points, dtype=np.float64).tobytes())
    return h.hexdigest()


def make_zero_shot_bundle(class_names, *, projection: ProjectionConfig, translator,
                          visual_encoder, text_encoder, prompt: str, backend: dict,
                          temperature: float = 1.0, translate: bool = True,
                          alpha=None, seed: int = 0) -> TrainedBundle:
    """Bundle with no trained parameters; alpha defaults to uniform 1/M."""
    class_names = tuple(class_names)
    text = normalize_rows(encode_prompts(text_encoder, PromptTemplate(prompt), class_names))
    m = len(projection.views)
    alpha = uniform_view_weights(m) if alpha is None else np.asarray(alpha, dtype=np.float64)
    return TrainedBundle(
        head_type="zero_shot", mode="none", params=None, alpha=alpha, prompt=prompt,
        class_names=class_names, text_features=text, projection=projection,
        translator=translator, visual_encoder=visual_encoder, backend=backend,
        temperature=temperature, translate=translate, seed=seed,
        frozen_hash=frozen_components_hash(translator, text, projection, backend),
    )


# ---------------------------------------------------------------------------
# Few-shot training
# ---------------------------------------------------------------------------

def _make_optimizer(tensors, opt: OptimizerConfig):
    cls = torch.optim.Adam if opt.algorithm == "adam" else torch.optim.AdamW
    return cls(tensors, lr=opt.learning_rate, weight_decay=opt.weight_decay)


def train_few_shot(
    episode: LabeledDataset,
    head_type: str = "viewpoint",
    mode: str = "both",
    *,
    projection: ProjectionConfig,
    translator,
    visual_encoder,
    text_encoder,
    prompt: str,
    opt: OptimizerConfig = FEWSHOT_DEFAULTS,
    temperature: float = 1.0,
    translate: bool = True,
    backend: dict | None = None,
    features: np.ndarray | None = None,
    hidden_dim: int | None = None,
    log_callback=None,
) -> TrainedBundle:
    """Train an adapter head on a frozen-feature episode.

    Only the adapter parameters move; the translator, encoders, text
    features, and projection config are read-only (their joint hash is
    checked before and after the loop). ``features`` may carry a
    precomputed (N, M, C) cache; otherwise features are extracted here,
    once, and reused every epoch. When the episode fits in one batch the
    loop degenerates to full-batch gradient descent.
    """
    if len(episode) == 0:
        raise ValidationError("episode is empty")
    if head_type not in ("viewpoint", "interview"):
        raise ValidationError(f"head_type must be 'viewpoint' or 'interview', got {head_type!r}")
    if mode not in ADAPTER_MODES:
        raise ValidationError(f"unknown adapter mode {mode!r}")
    backend = dict(backend or {})

    template = PromptTemplate(prompt)
    text = normalize_rows(encode_prompts(text_encoder, template, episode.class_names))
    hash_before = frozen_components_hash(translator, text, projection, backend)

    if features is None:
        features = extract_features_dataset(
            episode, projection, translator, visual_encoder, translate
        )
    features = np.asarray(features, dtype=np.float64)
    n, m, c = features.shape
    if n != len(episode):
        raise ValidationError(f"feature cache has {n} rows for {len(episode)} clouds")
    if m != len(projection.views):
        raise ValidationError(f"feature cache has {m} views, expected {len(projection.views)}")

    labels = episode.labels()
    feats_t = torch.from_numpy(features)
    text_t = torch.from_numpy(text)
    labels_t = torch.from_numpy(labels)

    if head_type == "viewpoint":
        init = init_viewpoint_params(m, c, hidden_dim, seed=opt.seed, mode=mode)
        w_local = torch.tensor(init.w_local, requires_grad=(mode != "global_only"))
        w_g1 = torch.tensor(init.w_g1, requires_grad=(mode != "view_only"))
        w_g2 = torch.tensor(init.w_g2, requires_grad=(mode != "view_only"))
        alpha = torch.tensor(init.alpha, requires_grad=True)
        tensors = [w_local, w_g1, w_g2, alpha]

        def logits_fn(batch):
            return viewpoint_summed_logits_t(
                w_local, w_g1, w_g2, alpha, batch, text_t, temperature
            )
    else:
        init = init_interview_params(m, c, hidden_dim, seed=opt.seed)
        f1 = torch.tensor(init.f1, requires_grad=True)
        f2 = torch.tensor(init.f2, requires_grad=True)
        w = torch.tensor(init.w, requires_grad=True)
        alpha = torch.tensor(uniform_view_weights(m), requires_grad=False)
        tensors = [f1, f2, w, alpha]

        def logits_fn(batch):
            return interview_summed_logits_t(f1, f2, w, alpha, batch, text_t, temperature)

    optimizer = _make_optimizer([t for t in tensors if t.requires_grad], opt)
    gen = torch.Generator().manual_seed(opt.seed)
    log: list[tuple[int, float, float]] = []
    step = 0
    for epoch in range(opt.epochs):
        order = torch.randperm(n, generator=gen)
        loss_sum = 0.0
        for start in range(0, n, opt.batch_size):
            batch = order[start : start + opt.batch_size]
            optimizer.zero_grad()
            logits = logits_fn(feats_t[batch])
            loss = torch.nn.functional.cross_entropy(logits, labels_t[batch])
            value = float(loss.detach())
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, step {step}")
            loss.backward()
            optimizer.step()
            loss_sum += value * len(batch)
            step += 1
        with torch.no_grad():
            acc = float((logits_fn(feats_t).argmax(dim=-1) == labels_t).double().mean()) * 100.0
        log.append((epoch, loss_sum / n, acc))
        if log_callback is not None:
            log_callback(epoch, loss_sum / n, acc)

    if head_type == "viewpoint":
        params = ViewpointAdapterParams(
            w_local.detach().numpy(), w_g1.detach().numpy(),
            w_g2.detach().numpy(), alpha.detach().numpy(),
        )
        alpha_out = params.alpha
    else:
        params = InterViewAdapterParams(
            f1.detach().numpy(), f2.detach().numpy(), w.detach().numpy()
        )
        alpha_out = alpha.numpy()

    hash_after = frozen_components_hash(translator, text, projection, backend)
    if hash_after != hash_before:
        raise RuntimeError("frozen components changed during training")

    return TrainedBundle(
        head_type=head_type, mode=mode if head_type == "viewpoint" else "none",
        params=params, alpha=alpha_out, prompt=prompt,
        class_names=episode.class_names, text_features=text, projection=projection,
        translator=translator, visual_encoder=visual_encoder, backend=backend,
        temperature=temperature, translate=translate, seed=opt.seed,
        training_log=log, frozen_hash=hash_after,
        dataset_fingerprint=dataset_fingerprint(episode),
    )


# ---------------------------------------------------------------------------
# Bundle persistence
# ---------------------------------------------------------------------------

def save_bundle(bundle: TrainedBundle, path) -> None:
    arrays: dict[str, np.ndarray] = {
        "alpha": np.asarray(bundle.alpha, dtype=np.float64),
        "text_features": np.asarray(bundle.text_features, dtype=np.float64),
        "training_log": np.asarray(bundle.training_log, dtype=np.float64).reshape(-1, 3),
    }
    if bundle.params is not None:
        for name, arr in bundle.params.to_arrays().items():
            arrays[f"adapter.{name}"] = arr
    if bundle.translator is not None:
        arrays["translator_params"] = bundle.translator.flatten_params()

    dims = {
        "m": len(bundle.projection.views),
        "c": int(bundle.text_features.shape[1]),
        "k": len(bundle.class_names),
    }
    if bundle.head_type == "viewpoint" and bundle.params is not None:
        dims["c_h"] = bundle.params.hidden_dim
    meta = {
        "head_type": bundle.head_type,
        "mode": bundle.mode,
        "dims": dims,
        "prompt": bundle.prompt,
        "class_names": list(bundle.class_names),
        "projection": bundle.projection.to_dict(),
        "translator": None if bundle.translator is None else {
            "config": bundle.translator.config.to_dict(),
            "seed": bundle.translator.seed,
        },
        "backend": bundle.backend,
        "temperature": bundle.temperature,
        "translate": bundle.translate,
        "seed": bundle.seed,
        "frozen_hash": bundle.frozen_hash,
        "dataset_fingerprint": bundle.dataset_fingerprint,
    }
    save_container(path, "bundle", meta, arrays)


def load_bundle(path) -> TrainedBundle:
    kind, meta, arrays = load_container(path)
    if kind != "bundle":
        raise ValidationError(f"{path}: container kind {kind!r} is not 'bundle'")
    head_type = meta["head_type"]
    adapter_arrays = {
        name.split(".", 1)[1]: arr for name, arr in arrays.items()
        if name.startswith("adapter.")
    }
    if head_type == "viewpoint":
        params = ViewpointAdapterParams.from_arrays(adapter_arrays)
    elif head_type == "interview":
        params = InterViewAdapterParams.from_arrays(adapter_arrays)
    else:
        params = None

    translator = None
    if meta["translator"] is not None:
        translator = Translator(
            TranslatorConfig.from_dict(meta["translator"]["config"]),
            seed=meta["translator"]["seed"],
        )
        translator.load_flat_params(arrays["translator_params"])

    backend = dict(meta["backend"])
    visual_encoder, _ = make_backend(**backend)

    log = [(int(e), float(l), float(a)) for e, l, a in arrays["training_log"]]
    return TrainedBundle(
        head_type=head_type, mode=meta["mode"], params=params,
        alpha=arrays["alpha"], prompt=meta["prompt"],
        class_names=tuple(meta["class_names"]),
        text_features=arrays["text_features"],
        projection=ProjectionConfig.from_dict(meta["projection"]),
        translator=translator, visual_encoder=visual_encoder, backend=backend,
        temperature=float(meta["temperature"]), translate=bool(meta["translate"]),
        seed=int(meta["seed"]), training_log=log,
        frozen_hash=meta["frozen_hash"],
        dataset_fingerprint=meta.get("dataset_fingerprint", ""),
    )


def write_training_log(log, path) -> None:
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss", "train_acc"])
        for epoch, loss, acc in log:
            writer.writerow([int(epoch), f"{loss:.10g}", f"{acc:.10g}"])
