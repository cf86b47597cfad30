"""Layered run configuration and reproducibility manifests.

Configuration is a flat dotted-key table with one documented type and
default per key. Layers resolve in precedence order

    defaults < config file < environment < command-line overrides

where the config file uses ``key = value`` lines (``#`` comments), the
environment uses ``POINTSHOT_``-prefixed names (``fewshot.learning_rate``
-> ``POINTSHOT_FEWSHOT_LEARNING_RATE``), and unknown keys are rejected at
every layer.

Every command writes a ``manifest.json`` into its output directory:
resolved config, config hash, component hashes, seeds, and a hash per
output file. Hashes of JSON outputs are computed with every
``wall_clock_sec`` field normalized to 0 — wall-clock time is the single
volatile field this package emits, so normalized manifests (and all other
outputs) are bit-identical across re-runs of the same command under the
toy backend.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .encoders import DEFAULT_PROMPT
from .errors import ParseError, ValidationError

ENV_PREFIX = "POINTSHOT_"


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


# key -> (type tag, default). Type tags: int, float, bool, str.
CONFIG_SCHEMA: dict[str, tuple[str, object]] = {
    "dataset.source": ("str", "synthetic"),  # synthetic | directory
    "dataset.path": ("str", ""),
    "dataset.classes": ("str", "cube,plane,sphere"),
    "dataset.n_per_class": ("int", 20),
    "dataset.points": ("int", 512),
    "dataset.seed": ("int", 0),
    "projection.views": ("str", "front,back,left,right,top,bottom"),
    "projection.resolution": ("int", 64),
    "projection.splat_radius": ("int", 1),
    "translator.depth_levels": ("int", 4),
    "translator.base_channels": ("int", 16),
    "translator.seed": ("int", 0),
    "translator.checkpoint": ("str", ""),
    "backend.name": ("str", "toy"),  # toy | clip
    "backend.feature_dim": ("int", 16),
    "backend.seed": ("int", 0),
    "backend.input_resolution": ("int", 64),
    "backend.clip_weights_path": ("str", ""),
    "backend.temperature": ("float", 1.0),
    "prompt.template": ("str", DEFAULT_PROMPT),
    "episode.n_way": ("int", 0),  # 0 = all classes
    "episode.k_shot": ("int", 16),
    "episode.seed": ("int", 0),
    "pretrain.algorithm": ("str", "adam"),
    "pretrain.learning_rate": ("float", 3e-3),
    "pretrain.weight_decay": ("float", 0.0),
    "pretrain.epochs": ("int", 100),
    "pretrain.batch_size": ("int", 16),
    "pretrain.seed": ("int", 0),
    "pretrain.steps": ("int", 0),  # 0 = no step cap
    "pretrain.resolution": ("int", 64),
    "pretrain.n_renders": ("int", 8),
    "pretrain.noise_mode": ("str", "exact"),
    "pretrain.renders_dir": ("str", ""),
    "fewshot.algorithm": ("str", "adamw"),
    "fewshot.learning_rate": ("float", 2e-2),
    "fewshot.weight_decay": ("float", 1e-4),
    "fewshot.epochs": ("int", 100),
    "fewshot.batch_size": ("int", 32),
    "fewshot.seed": ("int", 0),
    "fewshot.head": ("str", "viewpoint"),  # viewpoint | interview
    "fewshot.mode": ("str", "both"),  # both | view_only | global_only
    "fewshot.translate": ("bool", True),
    "fewshot.hidden_dim": ("int", 0),  # 0 = feature_dim
    "eval.shots": ("str", "1,2,4,8,10,12,16"),
    "eval.bundle": ("str", ""),
    "ablate.mode": ("str", "modes"),  # modes | prompts | translation | shots
    "ablate.prompts": ("str", ""),  # '|'-separated; empty = built-in table set
    "plot.reports": ("str", ""),  # ','-separated report.json paths
    "report.format": ("str", "json"),  # json | csv | both
}

_COERCERS = {"int": int, "float": float, "bool": _parse_bool, "str": str}

_ENV_NAMES = {
    ENV_PREFIX + key.replace(".", "_").upper(): key for key in CONFIG_SCHEMA
}


def coerce_value(key: str, raw) -> object:
    if key not in CONFIG_SCHEMA:
        raise ValidationError(f"unknown config key {key!r}")
    type_tag, _ = CONFIG_SCHEMA[key]
    if not isinstance(raw, str):
        # Already typed (programmatic override); trust but convert.
        raw = str(raw)
    try:
        return _COERCERS[type_tag](raw.strip() if type_tag != "str" else raw)
    except ValueError as exc:
        raise ValidationError(f"bad value for {key}: {raw!r} ({exc})") from exc


def parse_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blanks ignored."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such config file: {path}")
    raw: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
            value = value[1:-1]
        if key not in CONFIG_SCHEMA:
            raise ValidationError(f"{path}:{lineno}: unknown config key {key!r}")
        raw[key] = value
    return raw


def resolve_config(config_file=None, overrides=None, environ=None) -> dict[str, object]:
    """Resolve the full typed config: defaults < file < env < overrides.

    ``overrides`` is a mapping or an iterable of ``key=value`` strings.
    """
    config = {key: default for key, (_, default) in CONFIG_SCHEMA.items()}
    if config_file:
        for key, raw in parse_config_file(config_file).items():
            config[key] = coerce_value(key, raw)
    environ = os.environ if environ is None else environ
    for env_name, key in _ENV_NAMES.items():
        if env_name in environ:
            config[key] = coerce_value(key, environ[env_name])
    if overrides:
        if isinstance(overrides, dict):
            items = overrides.items()
        else:
            items = []
            for entry in overrides:
                if "=" not in entry:
                    raise ParseError(f"override must look like key=value, got {entry!r}")
                key, value = entry.split("=", 1)
                items.append((key.strip(), value.strip()))
        for key, raw in items:
            config[key] = coerce_value(key, raw)
    return config


def validate_config(config: dict) -> dict[str, object]:
    """Type-check a full config mapping (e.g. one read back from a manifest)."""
    unknown = sorted(set(config) - set(CONFIG_SCHEMA))
    if unknown:
        raise ValidationError(f"unknown config keys: {unknown}")
    resolved = {key: default for key, (_, default) in CONFIG_SCHEMA.items()}
    for key, value in config.items():
        resolved[key] = coerce_value(key, value)
    return resolved


def config_hash(config: dict) -> str:
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def normalize_volatile(obj):
    """Recursively zero every ``wall_clock_sec`` field of a JSON-like object."""
    if isinstance(obj, dict):
        return {
            k: (0.0 if k == "wall_clock_sec" else normalize_volatile(v))
            for k, v in obj.items()
        }
    if isinstance(obj, list):
        return [normalize_volatile(v) for v in obj]
    return obj


def output_hash(path) -> str:
    """Hash an output file; JSON files are hashed with wall-clock normalized."""
    path = Path(path)
    if path.suffix == ".json":
        normalized = normalize_volatile(json.loads(path.read_text()))
        payload = json.dumps(normalized, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


MANIFEST_NAME = "manifest.json"


def write_manifest(out_dir, command: str, config: dict, outputs,
                   component_hashes: dict | None = None, seeds: dict | None = None,
                   metrics: dict | None = None, wall_clock_sec: float = 0.0) -> Path:
    """Write ``manifest.json`` describing one command run.

    ``outputs`` lists the run's output files (paths under ``out_dir``);
    each is hashed with :func:`output_hash`.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "component_hashes": dict(component_hashes or {}),
        "seeds": dict(seeds or {}),
        "metrics": dict(metrics or {}),
        "outputs": {
            str(Path(p).relative_to(out_dir)): output_hash(p) for p in outputs
        },
        "wall_clock_sec": wall_clock_sec,
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such manifest: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    for field in ("command", "config", "outputs"):
        if field not in manifest:
            raise ValidationError(f"{path}: manifest missing {field!r}")
    return manifest
