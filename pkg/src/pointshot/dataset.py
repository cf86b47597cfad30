"""Point cloud ingestion, normalization, episode sampling, and synthetic fixtures.

Clouds are plain ``(P, 3)`` float64 arrays wrapped in :class:`PointCloud`.
All randomness flows through explicit seeds; every function here is pure,
so repeated calls with the same arguments are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

SYNTHETIC_CLASSES = ("cube", "cylinder", "plane", "sphere")


@dataclass(frozen=True)
class PointCloud:
    """A set of 3D points with an optional class assignment."""

    points: np.ndarray
    label: int | None = None
    class_name: str | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValidationError(f"points must have shape (P, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValidationError("point cloud must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class EpisodeSpec:
    """N-way K-shot episode description."""

    n_way: int
    k_shot: int
    seed: int = 0

    def __post_init__(self):
        if self.n_way < 2:
            raise ValidationError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 1:
            raise ValidationError(f"k_shot must be >= 1, got {self.k_shot}")


@dataclass(frozen=True)
class LabeledDataset:
    """Clouds plus the ordered class vocabulary their labels index."""

    clouds: tuple[PointCloud, ...]
    class_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "clouds", tuple(self.clouds))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if len(set(self.class_names)) != len(self.class_names):
            raise ValidationError("class names must be unique")
        k = len(self.class_names)
        for cloud in self.clouds:
            if cloud.label is None or not (0 <= cloud.label < k):
                raise ValidationError(
                    f"cloud label {cloud.label!r} does not index {k} classes"
                )

    def __len__(self) -> int:
        return len(self.clouds)

    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.clouds], dtype=np.int64)

    def indices_for_class(self, label: int) -> list[int]:
        return [i for i, c in enumerate(self.clouds) if c.label == label]


# ---------------------------------------------------------------------------
# File readers
# ---------------------------------------------------------------------------

def read_off(path) -> np.ndarray:
    """Read the vertices of an ASCII OFF file as a (P, 3) array.

    Handles the common malformed header where the counts are fused onto
    the "OFF" keyword line (e.g. "OFF490 518 0").
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    text = path.read_text()
    tokens: list[str] = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or not tokens[0].upper().startswith("OFF"):
        raise ParseError(f"{path}: missing OFF header")
    first = tokens[0]
    rest = tokens[1:]
    if len(first) > 3:  # fused header: counts glued to the keyword
        rest = [first[3:]] + rest
    if len(rest) < 3:
        raise ParseError(f"{path}: truncated OFF header")
    try:
        n_vertices = int(rest[0])
    except ValueError as exc:
        raise ParseError(f"{path}: bad vertex count {rest[0]!r}") from exc
    if n_vertices < 1:
        raise ParseError(f"{path}: OFF file declares {n_vertices} vertices")
    coords = rest[3 : 3 + 3 * n_vertices]
    if len(coords) < 3 * n_vertices:
        raise ParseError(f"{path}: expected {n_vertices} vertices, file is truncated")
    try:
        pts = np.array([float(t) for t in coords], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric vertex data") from exc
    return pts.reshape(n_vertices, 3)


def read_ply(path) -> np.ndarray:
    """Read the x/y/z vertex properties of an ASCII PLY file as (P, 3)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}: missing ply header")
    n_vertices = 0
    properties: list[str] = []
    in_vertex_element = False
    body_start = None
    for i, raw in enumerate(lines[1:], start=1):
        line = raw.strip()
        if line.startswith("format"):
            if "ascii" not in line:
                raise ParseError(f"{path}: only ASCII PLY is supported")
        elif line.startswith("element"):
            parts = line.split()
            in_vertex_element = parts[1] == "vertex"
            if in_vertex_element:
                n_vertices = int(parts[2])
        elif line.startswith("property") and in_vertex_element:
            properties.append(line.split()[-1])
        elif line == "end_header":
            body_start = i + 1
            break
    if body_start is None:
        raise ParseError(f"{path}: no end_header")
    if n_vertices < 1:
        raise ParseError(f"{path}: PLY file declares {n_vertices} vertices")
    try:
        cols = [properties.index(axis) for axis in ("x", "y", "z")]
    except ValueError as exc:
        raise ParseError(f"{path}: vertex element lacks x/y/z properties") from exc
    rows = []
    for raw in lines[body_start : body_start + n_vertices]:
        parts = raw.split()
        if len(parts) < len(properties):
            raise ParseError(f"{path}: truncated vertex row {raw!r}")
        try:
            rows.append([float(parts[c]) for c in cols])
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric vertex data in {raw!r}") from exc
    if len(rows) < n_vertices:
        raise ParseError(f"{path}: expected {n_vertices} vertices, file is truncated")
    return np.array(rows, dtype=np.float64)


_READERS = {".off": read_off, ".ply": read_ply}


def load_dataset(path, format: str = "directory") -> LabeledDataset:
    """Load ``<root>/<class_name>/*.off|*.ply`` into a labeled dataset.

    ``format`` selects which files are read: "off", "ply", or "directory"
    (both extensions). Class indices are assigned alphabetically by class
    name; files within a class are read in sorted order. Coordinates are
    passed through unchanged.
    """
    root = Path(path)
    if not root.exists():
        raise FileNotFoundError(f"no such dataset root: {root}")
    if format not in ("off", "ply", "directory"):
        raise ValidationError(f"unknown format {format!r}")
    extensions = [f".{format}"] if format != "directory" else [".off", ".ply"]

    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ValidationError(f"{root}: no class subdirectories")
    class_names = tuple(d.name for d in class_dirs)
    clouds = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(
            f for f in class_dir.iterdir() if f.suffix.lower() in extensions
        )
        if not files:
            raise ValidationError(f"class directory {class_dir} contains no files")
        for f in files:
            pts = _READERS[f.suffix.lower()](f)
            clouds.append(PointCloud(pts, label=label, class_name=class_dir.name))
    return LabeledDataset(tuple(clouds), class_names)


def save_dataset_off(dataset: LabeledDataset, root) -> None:
    """Write a dataset to the ``<root>/<class_name>/*.off`` layout."""
    root = Path(root)
    counters = {name: 0 for name in dataset.class_names}
    for cloud in dataset.clouds:
        name = dataset.class_names[cloud.label]
        class_dir = root / name
        class_dir.mkdir(parents=True, exist_ok=True)
        idx = counters[name]
        counters[name] += 1
        lines = ["OFF", f"{cloud.n_points} 0 0"]
        for p in cloud.points:
            lines.append(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}")
        (class_dir / f"{name}_{idx:04d}.off").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Cloud transforms
# ---------------------------------------------------------------------------

def sample_points(cloud: PointCloud, n: int = 1024, seed: int = 0) -> PointCloud:
    """Uniformly subsample a cloud to exactly ``n`` points.

    Without replacement when the cloud has at least ``n`` points, with
    replacement otherwise.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    replace_draw = cloud.n_points < n
    idx = rng.choice(cloud.n_points, size=n, replace=replace_draw)
    return replace(cloud, points=cloud.points[idx])


def normalize_unit_cube(cloud: PointCloud) -> PointCloud:
    """Center the cloud at its centroid and scale max |coordinate| to 1.

    A cloud whose points all coincide collapses to the origin.
    """
    pts = cloud.points
    centered = pts - pts.mean(axis=0)
    extent = np.abs(centered).max()
    if extent < 1e-12:
        return replace(cloud, points=np.zeros_like(pts))
    return replace(cloud, points=centered / extent)


# ---------------------------------------------------------------------------
# Episode sampling
# ---------------------------------------------------------------------------

def normalize_dataset(dataset: LabeledDataset) -> LabeledDataset:
    """Apply :func:`normalize_unit_cube` to every cloud, keeping labels."""
    return LabeledDataset(
        tuple(normalize_unit_cube(c) for c in dataset.clouds), dataset.class_names
    )


def sample_few_shot_indices(
    dataset: LabeledDataset, spec: EpisodeSpec
) -> tuple[list[int], list[int], tuple[str, ...]]:
    """Index-level episode sampler backing :func:`sample_few_shot`.

    Returns (train indices, residual indices, selected class names); both
    index lists refer to ``dataset.clouds`` and are sorted ascending.
    """
    k_classes = len(dataset.class_names)
    if spec.n_way > k_classes:
        raise ValidationError(
            f"n_way={spec.n_way} exceeds the {k_classes} available classes"
        )
    rng = np.random.default_rng(spec.seed)
    chosen = sorted(rng.choice(k_classes, size=spec.n_way, replace=False).tolist())
    train_idx: list[int] = []
    residual_idx: list[int] = []
    for label in chosen:
        members = dataset.indices_for_class(label)
        if len(members) < spec.k_shot:
            raise ValidationError(
                f"class {dataset.class_names[label]!r} has {len(members)} "
                f"instances, fewer than k_shot={spec.k_shot}"
            )
        picked = rng.choice(len(members), size=spec.k_shot, replace=False)
        picked_set = {members[j] for j in picked.tolist()}
        train_idx.extend(sorted(picked_set))
        residual_idx.extend(i for i in members if i not in picked_set)
    return sorted(train_idx), sorted(residual_idx), tuple(
        dataset.class_names[label] for label in chosen
    )


def _subset(dataset: LabeledDataset, indices, class_names) -> LabeledDataset:
    remap = {name: new for new, name in enumerate(class_names)}
    clouds = []
    for i in indices:
        c = dataset.clouds[i]
        clouds.append(replace(c, label=remap[dataset.class_names[c.label]]))
    return LabeledDataset(tuple(clouds), tuple(class_names))


def sample_few_shot(
    dataset: LabeledDataset, spec: EpisodeSpec
) -> tuple[LabeledDataset, LabeledDataset]:
    """Sample an N-way K-shot training set; the rest of each chosen class
    becomes the residual (evaluation) set.

    Class selection and per-class instance selection are both driven by
    ``spec.seed``. Labels in the returned datasets index the selected
    classes in alphabetical order.
    """
    train_idx, residual_idx, chosen = sample_few_shot_indices(dataset, spec)
    chosen = tuple(sorted(chosen))
    return _subset(dataset, train_idx, chosen), _subset(dataset, residual_idx, chosen)


# ---------------------------------------------------------------------------
# Synthetic fixture
# ---------------------------------------------------------------------------

def _unit_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    return v / norms


def _unit_cube_surface(n: int, rng: np.random.Generator) -> np.ndarray:
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        mask = axis == a
        others = [b for b in range(3) if b != a]
        pts[mask, a] = sign[mask]
        pts[mask, others[0]] = uv[mask, 0]
        pts[mask, others[1]] = uv[mask, 1]
    return pts


def _plane(n: int, rng: np.random.Generator) -> np.ndarray:
    pts = np.zeros((n, 3))
    pts[:, :2] = rng.uniform(-1.0, 1.0, size=(n, 2))
    return pts


def _cylinder(n: int, rng: np.random.Generator) -> np.ndarray:
    # Lateral area 4*pi vs. two caps of pi each.
    lateral_frac = 4.0 / 6.0
    pts = np.empty((n, 3))
    on_side = rng.uniform(size=n) < lateral_frac
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    n_side = int(on_side.sum())
    pts[on_side, 0] = np.cos(theta[on_side])
    pts[on_side, 1] = np.sin(theta[on_side])
    pts[on_side, 2] = rng.uniform(-1.0, 1.0, size=n_side)
    caps = ~on_side
    n_caps = int(caps.sum())
    r = np.sqrt(rng.uniform(size=n_caps))
    pts[caps, 0] = r * np.cos(theta[caps])
    pts[caps, 1] = r * np.sin(theta[caps])
    pts[caps, 2] = np.where(rng.uniform(size=n_caps) < 0.5, -1.0, 1.0)
    return pts


_PRIMITIVES = {
    "sphere": _unit_sphere,
    "cube": _unit_cube_surface,
    "plane": _plane,
    "cylinder": _cylinder,
}

JITTER_FRACTION = 0.05


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    # Uniform over SO(3) via normalized quaternion.
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def make_synthetic_shapes(
    classes,
    n_per_class: int,
    points_per_cloud: int = 1024,
    seed: int = 0,
) -> LabeledDataset:
    """Generate a labeled dataset of jittered, randomly rotated primitives.

    Each cloud is sampled from the surface of the named primitive, each
    coordinate is scaled by an independent uniform factor in
    [1 - 0.05, 1 + 0.05], and the whole cloud gets a random rotation.
    """
    classes = tuple(classes)
    if not classes:
        raise ValidationError("class set must be nonempty")
    unknown = [c for c in classes if c not in _PRIMITIVES]
    if unknown:
        raise ValidationError(f"unknown synthetic classes: {unknown}")
    if n_per_class < 1:
        raise ValidationError(f"n_per_class must be >= 1, got {n_per_class}")
    if points_per_cloud < 1:
        raise ValidationError("points_per_cloud must be >= 1")

    class_names = tuple(sorted(classes))
    rng = np.random.default_rng(seed)
    clouds = []
    for label, name in enumerate(class_names):
        sampler = _PRIMITIVES[name]
        for _ in range(n_per_class):
            pts = sampler(points_per_cloud, rng)
            jitter = rng.uniform(
                1.0 - JITTER_FRACTION, 1.0 + JITTER_FRACTION, size=pts.shape
            )
            pts = (pts * jitter) @ _random_rotation(rng).T
            clouds.append(PointCloud(pts, label=label, class_name=name))
    return LabeledDataset(tuple(clouds), class_names)
