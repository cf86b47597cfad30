"""Pre-training corpus construction for the depth-to-image translator.

Binary masks are extracted from RGBA renders, sparsified by elementwise
multiplication with a half-white/half-black noise image, and paired with
the alpha-composited RGB target. Sparse masks are valid stand-ins for
point cloud depth maps: values in {0, 1} within the depth maps' [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

NOISE_MODES = ("exact", "bernoulli")


@dataclass(frozen=True)
class RenderPair:
    """One pre-training sample: sparse binary input, RGB target."""

    input: np.ndarray  # (H, W) float32 in {0, 1}
    target: np.ndarray  # (H, W, 3) float32 in [0, 1]

    def __post_init__(self):
        if self.input.shape != self.target.shape[:2]:
            raise ValidationError(
                f"input {self.input.shape} and target {self.target.shape} "
                "resolutions differ"
            )


def extract_mask(rgba: np.ndarray, alpha_threshold: float = 0.5) -> np.ndarray:
    """Threshold the alpha channel of an (H, W, 4) image into a {0, 1} mask."""
    rgba = np.asarray(rgba)
    if rgba.ndim != 3 or rgba.shape[2] != 4:
        raise ValidationError(f"expected an HxWx4 RGBA image, got shape {rgba.shape}")
    if not 0.0 < alpha_threshold < 1.0:
        raise ValidationError(f"alpha_threshold must be in (0, 1), got {alpha_threshold}")
    return (rgba[:, :, 3] > alpha_threshold).astype(np.float32)


def make_noise_image(h: int, w: int, seed: int, mode: str = "exact") -> np.ndarray:
    """Sample an (h, w) image of half white and half black pixels.

    "exact" places exactly floor(h*w/2) ones via a seeded shuffle of pixel
    indices; "bernoulli" draws each pixel independently with p = 0.5.
    """
    if h * w < 2:
        raise ValidationError("noise image needs at least 2 pixels")
    if mode not in NOISE_MODES:
        raise ValidationError(f"unknown noise mode {mode!r}")
    rng = np.random.default_rng(seed)
    if mode == "bernoulli":
        return (rng.random(size=(h, w)) < 0.5).astype(np.float32)
    flat = np.zeros(h * w, dtype=np.float32)
    flat[rng.permutation(h * w)[: (h * w) // 2]] = 1.0
    return flat.reshape(h, w)


def sparsify_mask(mask: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Elementwise product of a binary mask and a noise image."""
    mask = np.asarray(mask, dtype=np.float32)
    noise = np.asarray(noise, dtype=np.float32)
    if mask.shape != noise.shape:
        raise ValidationError(
            f"mask {mask.shape} and noise {noise.shape} resolutions differ"
        )
    return mask * noise


def _resize_bilinear(image: np.ndarray, resolution: int) -> np.ndarray:
    import torch
    import torch.nn.functional as F

    t = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))[None]
    t = F.interpolate(t, size=(resolution, resolution), mode="bilinear", align_corners=True)
    return t[0].numpy().transpose(1, 2, 0)


def make_render_pair(
    rgba: np.ndarray,
    seed: int,
    resolution: int = 224,
    alpha_threshold: float = 0.5,
    noise_mode: str = "exact",
) -> RenderPair:
    """Build one (sparse mask, RGB target) pair from an RGBA render.

    The render is resized first, then the mask is thresholded from the
    resized alpha (keeping it strictly binary at the target resolution) and
    the RGB channels are composited over black.
    """
    rgba = np.asarray(rgba, dtype=np.float32)
    if rgba.ndim != 3 or rgba.shape[2] != 4:
        raise ValidationError(f"expected an HxWx4 RGBA image, got shape {rgba.shape}")
    if rgba.shape[:2] != (resolution, resolution):
        rgba = _resize_bilinear(rgba, resolution)
    mask = extract_mask(rgba, alpha_threshold)
    noise = make_noise_image(resolution, resolution, seed, mode=noise_mode)
    rgb = rgba[:, :, :3] * rgba[:, :, 3:4]  # composite over black
    return RenderPair(sparsify_mask(mask, noise), np.clip(rgb, 0.0, 1.0))


def build_pretraining_set(
    render_dir,
    resolution: int = 224,
    seed: int = 0,
    alpha_threshold: float = 0.5,
    noise_mode: str = "exact",
) -> list[RenderPair]:
    """Turn a directory of RGBA PNG renders into translator training pairs.

    Files are processed in sorted order and each sample gets a fresh noise
    image seeded as ``seed + index``, so corpus construction is
    deterministic and embarrassingly parallel.
    """
    from PIL import Image

    render_dir = Path(render_dir)
    if not render_dir.exists():
        raise FileNotFoundError(f"no such render directory: {render_dir}")
    files = sorted(p for p in render_dir.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise ValidationError(f"{render_dir}: no PNG renders found")
    pairs = []
    for i, path in enumerate(files):
        try:
            with Image.open(path) as im:
                rgba = np.asarray(im.convert("RGBA"), dtype=np.float32) / 255.0
        except OSError as exc:
            raise OSError(f"unreadable render {path}: {exc}") from exc
        pairs.append(
            make_render_pair(
                rgba,
                seed=seed + i,
                resolution=resolution,
                alpha_threshold=alpha_threshold,
                noise_mode=noise_mode,
            )
        )
    return pairs


def save_pair_pngs(pairs, out_dir, stem: str = "pair") -> None:
    """Cache pairs as ``<stem>_<i>_mask.png`` / ``<stem>_<i>_rgb.png``."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, pair in enumerate(pairs):
        mask8 = np.rint(pair.input * 255.0).astype(np.uint8)
        rgb8 = np.rint(pair.target * 255.0).astype(np.uint8)
        Image.fromarray(mask8, mode="L").save(out_dir / f"{stem}_{i:04d}_mask.png")
        Image.fromarray(rgb8, mode="RGB").save(out_dir / f"{stem}_{i:04d}_rgb.png")


# ---------------------------------------------------------------------------
# Synthetic renders (desk-scale stand-in for a real rendered-RGBA corpus)
# ---------------------------------------------------------------------------

def make_synthetic_renders(
    n: int, resolution: int = 64, seed: int = 0, points_per_cloud: int = 768
) -> list[np.ndarray]:
    """Rasterize colored primitives into RGBA renders.

    Each render takes a random primitive's front-view depth map, fills the
    silhouette with a random color shaded by the render's mean depth, and
    uses the silhouette as alpha. Piecewise-constant targets keep the
    mask -> RGB task learnable within a small step budget at desk scale.
    """
    from .dataset import SYNTHETIC_CLASSES, make_synthetic_shapes, normalize_unit_cube
    from .projection import ProjectionConfig, project_views

    if n < 1:
        raise ValidationError("n must be >= 1")
    per_class = max(1, math.ceil(n / len(SYNTHETIC_CLASSES)))
    shapes = make_synthetic_shapes(
        SYNTHETIC_CLASSES, per_class, points_per_cloud=points_per_cloud, seed=seed
    )
    config = ProjectionConfig(views=("front",), resolution=resolution, splat_radius=1)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(shapes.clouds))[:n]
    renders = []
    for idx in order:
        depth = project_views(normalize_unit_cube(shapes.clouds[idx]), config).maps[0]
        alpha = (depth > 0.0).astype(np.float32)
        base = rng.uniform(0.25, 1.0, size=3).astype(np.float32)
        visible = depth[depth > 0.0]
        shade = 0.35 + 0.65 * float(visible.mean()) if visible.size else 1.0
        rgba = np.concatenate([base[None, None, :] * shade * alpha[:, :, None],
                               alpha[:, :, None]], axis=2)
        renders.append(rgba.astype(np.float32))
    return renders


def save_renders(renders, out_dir, stem: str = "render") -> list[Path]:
    """Write RGBA renders as PNGs; returns the written paths."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, rgba in enumerate(renders):
        arr = np.rint(np.clip(rgba, 0.0, 1.0) * 255.0).astype(np.uint8)
        path = out_dir / f"{stem}_{i:04d}.png"
        Image.fromarray(arr, mode="RGBA").save(path)
        paths.append(path)
    return paths
