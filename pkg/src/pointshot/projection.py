"""Orthographic multi-view depth rendering of normalized point clouds.

A cloud in [-1, 1]^3 is rasterized from up to six axis-aligned views into
single-channel depth maps. Pixel intensity encodes proximity: a point with
toward-viewer coordinate ``c`` writes ``(c + 1) / 2``, so nearer points are
brighter and the empty background stays exactly 0. Colliding points resolve
by maximum intensity (a z-buffer), which makes rendering independent of
point order.

View bases (image column axis a, image row axis b, toward-viewer axis c),
expressed as signed world axes:

    front:  a = +x, b = +y, c = +z
    back:   a = -x, b = +y, c = -z
    right:  a = -z, b = +y, c = +x
    left:   a = +z, b = +y, c = -x
    top:    a = +x, b = -z, c = +y
    bottom: a = +x, b = +z, c = -y

These bases give the symmetries the tests rely on: a 90-degree rotation
about the vertical axis ((x, y, z) -> (-z, y, x)) maps the right view onto
the front view, and mirroring a z-symmetric cloud swaps front/back up to a
horizontal flip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import PointCloud
from .errors import ValidationError

VIEW_NAMES = ("front", "back", "left", "right", "top", "bottom")

# view -> ((a_axis, a_sign), (b_axis, b_sign), (c_axis, c_sign))
_VIEW_BASES = {
    "front": ((0, 1.0), (1, 1.0), (2, 1.0)),
    "back": ((0, -1.0), (1, 1.0), (2, -1.0)),
    "right": ((2, -1.0), (1, 1.0), (0, 1.0)),
    "left": ((2, 1.0), (1, 1.0), (0, -1.0)),
    "top": ((0, 1.0), (2, -1.0), (1, 1.0)),
    "bottom": ((0, 1.0), (2, 1.0), (1, -1.0)),
}

_COORD_TOLERANCE = 1e-6


@dataclass(frozen=True)
class ProjectionConfig:
    views: tuple[str, ...] = VIEW_NAMES
    resolution: int = 224
    splat_radius: int = 1
    background_value: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        if not self.views:
            raise ValidationError("view list must be nonempty")
        if len(set(self.views)) != len(self.views):
            raise ValidationError(f"duplicate views in {self.views}")
        unknown = [v for v in self.views if v not in _VIEW_BASES]
        if unknown:
            raise ValidationError(f"unknown views: {unknown}")
        if self.resolution < 2:
            raise ValidationError(f"resolution must be >= 2, got {self.resolution}")
        if self.splat_radius < 0:
            raise ValidationError("splat_radius must be >= 0")
        if self.background_value != 0.0:
            raise ValidationError("background_value is fixed at 0")

    def to_dict(self) -> dict:
        return {
            "views": list(self.views),
            "resolution": self.resolution,
            "splat_radius": self.splat_radius,
            "background_value": self.background_value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectionConfig":
        return cls(
            views=tuple(d["views"]),
            resolution=d["resolution"],
            splat_radius=d["splat_radius"],
            background_value=d.get("background_value", 0.0),
        )


@dataclass(frozen=True)
class DepthMapSet:
    """Stack of single-channel depth maps, one per rendered view."""

    maps: np.ndarray  # (M, H, W) float32 in [0, 1]
    view_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "view_ids", tuple(self.view_ids))
        if self.maps.ndim != 3 or self.maps.shape[0] != len(self.view_ids):
            raise ValidationError(
                f"maps shape {self.maps.shape} does not match "
                f"{len(self.view_ids)} view ids"
            )

    def __getitem__(self, view: str) -> np.ndarray:
        return self.maps[self.view_ids.index(view)]


def view_plane_coordinates(points: np.ndarray, view: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split world coordinates into (a, b, c) for the named view."""
    (ai, asgn), (bi, bsgn), (ci, csgn) = _VIEW_BASES[view]
    return asgn * points[:, ai], bsgn * points[:, bi], csgn * points[:, ci]


def project_views(cloud: PointCloud, config: ProjectionConfig = ProjectionConfig()) -> DepthMapSet:
    """Rasterize a normalized cloud into one depth map per configured view.

    Each point lands on pixel (row, col) = (floor((b+1)/2*H), floor((a+1)/2*W)),
    clamped to bounds, with intensity (c+1)/2, and is splatted onto every
    pixel within ``splat_radius`` in Chebyshev distance. Overlaps keep the
    maximum intensity.
    """
    pts = cloud.points
    if np.abs(pts).max() > 1.0 + _COORD_TOLERANCE:
        raise ValidationError(
            "cloud coordinates exceed [-1, 1]; normalize_unit_cube it first"
        )
    res = config.resolution
    r = config.splat_radius
    maps = np.zeros((len(config.views), res, res), dtype=np.float32)
    for m, view in enumerate(config.views):
        a, b, c = view_plane_coordinates(pts, view)
        u = np.clip(np.floor((a + 1.0) / 2.0 * res), 0, res - 1).astype(np.int64)
        v = np.clip(np.floor((b + 1.0) / 2.0 * res), 0, res - 1).astype(np.int64)
        intensity = ((c + 1.0) / 2.0).astype(np.float32)
        img = maps[m]
        for dv in range(-r, r + 1):
            for du in range(-r, r + 1):
                vv = v + dv
                uu = u + du
                inside = (vv >= 0) & (vv < res) & (uu >= 0) & (uu < res)
                np.maximum.at(img, (vv[inside], uu[inside]), intensity[inside])
    return DepthMapSet(maps, config.views)


def depth_to_encoder_image(depth_map: np.ndarray, resolution: int = 224) -> np.ndarray:
    """Replicate a depth map to 3 channels and bilinearly resize it.

    Resizing is corner-aligned, so corner pixel values are preserved
    exactly and outputs stay inside the input value range.
    """
    depth_map = np.asarray(depth_map, dtype=np.float32)
    if depth_map.ndim != 2:
        raise ValidationError(f"expected an HxW depth map, got shape {depth_map.shape}")
    if depth_map.min() < 0.0 or depth_map.max() > 1.0:
        raise ValidationError("depth map values must lie in [0, 1]")
    import torch
    import torch.nn.functional as F

    t = torch.from_numpy(depth_map)[None, None]
    if depth_map.shape != (resolution, resolution):
        t = F.interpolate(t, size=(resolution, resolution), mode="bilinear", align_corners=True)
    resized = t[0, 0].numpy()
    return np.repeat(resized[:, :, None], 3, axis=2)


def save_depth_png(depth_map: np.ndarray, path) -> None:
    """Write a depth map as an 8-bit grayscale PNG (intensity * 255, rounded)."""
    from PIL import Image

    arr = np.rint(np.asarray(depth_map, dtype=np.float64) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)
