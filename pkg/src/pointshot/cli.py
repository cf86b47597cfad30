"""Command-line entry point: reproducible runs over the whole pipeline.

One binary with subcommands (project, pretrain, fewshot, zeroshot, eval,
ablate, plot) sharing a layered configuration (see manifest module) and a
common output convention: everything a command writes lands under
``--out`` with fixed names, plus a ``manifest.json`` from which the run
can be repeated bit-identically (toy backend) via ``--from-manifest``.

Exit codes: 0 success, 1 runtime failure, 2 usage/input error.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import evaluator as ev
from .containers import save_container, sha256_arrays, sha256_file
from .encoders import make_backend
from .errors import ParseError, TrainingDivergedError, ValidationError
from .manifest import (
    load_manifest,
    resolve_config,
    validate_config,
    write_manifest,
)
from .maskprep import build_pretraining_set, make_render_pair, make_synthetic_renders
from .projection import DepthMapSet, ProjectionConfig, project_views, save_depth_png
from .trainer import (
    OptimizerConfig,
    make_zero_shot_bundle,
    load_bundle,
    save_bundle,
    train_few_shot,
    write_training_log,
)
from .translator import (
    Translator,
    TranslatorConfig,
    load_translator,
    pretrain,
    save_translator,
    write_loss_curve,
)

# Config keys each subcommand consumes, shown in its --help epilog.
COMMAND_KEYS = {
    "project": [
        "dataset.source", "dataset.path", "dataset.classes", "dataset.points",
        "dataset.seed", "projection.views", "projection.resolution",
        "projection.splat_radius",
    ],
    "pretrain": [
        "pretrain.renders_dir", "pretrain.n_renders", "pretrain.resolution",
        "pretrain.noise_mode", "pretrain.algorithm", "pretrain.learning_rate",
        "pretrain.weight_decay", "pretrain.epochs", "pretrain.batch_size",
        "pretrain.seed", "pretrain.steps", "translator.depth_levels",
        "translator.base_channels", "translator.seed",
    ],
    "fewshot": [
        "dataset.source", "dataset.path", "dataset.classes", "dataset.n_per_class",
        "dataset.points", "dataset.seed", "projection.views",
        "projection.resolution", "projection.splat_radius",
        "translator.checkpoint", "backend.name", "backend.feature_dim",
        "backend.seed", "backend.input_resolution", "backend.clip_weights_path",
        "backend.temperature", "prompt.template", "episode.n_way",
        "episode.k_shot", "episode.seed", "fewshot.algorithm",
        "fewshot.learning_rate", "fewshot.weight_decay", "fewshot.epochs",
        "fewshot.batch_size", "fewshot.seed", "fewshot.head", "fewshot.mode",
        "fewshot.translate", "fewshot.hidden_dim", "report.format",
    ],
    "zeroshot": [
        "dataset.source", "dataset.path", "dataset.classes", "dataset.n_per_class",
        "dataset.points", "dataset.seed", "projection.views",
        "projection.resolution", "projection.splat_radius",
        "translator.checkpoint", "translator.depth_levels",
        "translator.base_channels", "translator.seed", "backend.name",
        "backend.feature_dim", "backend.seed", "backend.input_resolution",
        "backend.clip_weights_path", "backend.temperature", "prompt.template",
        "fewshot.translate", "report.format",
    ],
    "eval": [
        "eval.bundle", "dataset.source", "dataset.path", "dataset.classes",
        "dataset.n_per_class", "dataset.points", "dataset.seed", "report.format",
    ],
    "ablate": [
        "ablate.mode", "ablate.prompts", "eval.shots", "dataset.source",
        "dataset.path", "dataset.classes", "dataset.n_per_class",
        "dataset.points", "dataset.seed", "projection.views",
        "projection.resolution", "projection.splat_radius",
        "translator.checkpoint", "translator.depth_levels",
        "translator.base_channels", "translator.seed", "backend.name",
        "backend.feature_dim", "backend.seed", "backend.input_resolution",
        "backend.temperature", "prompt.template", "episode.k_shot",
        "episode.seed", "fewshot.algorithm", "fewshot.learning_rate",
        "fewshot.weight_decay", "fewshot.epochs", "fewshot.batch_size",
        "fewshot.seed", "fewshot.hidden_dim", "fewshot.translate",
        "report.format",
    ],
    "plot": ["plot.reports"],
}


def _epilog(command: str) -> str:
    keys = "\n  ".join(COMMAND_KEYS[command])
    return (
        "config keys consumed (set via file, POINTSHOT_* env, or --set):\n  "
        f"{keys}\n"
    )


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key = value config file")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override one config key (repeatable)")
    sub.add_argument("--out", help="output directory (default runs/<command>)")
    sub.add_argument("--jobs", type=int, default=1,
                     help="parallel workers for view rendering / ablation arms")
    sub.add_argument("--from-manifest", metavar="PATH",
                     help="re-run with the exact config stored in a manifest.json "
                          "(file/env/--set layers are ignored)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointshot",
        description="Few-shot point-cloud classification via multi-view depth "
                    "rendering, depth-to-image translation, and frozen "
                    "vision-language encoders.",
    )
    subs = parser.add_subparsers(dest="command")

    p = subs.add_parser(
        "project", help="render a cloud into per-view depth PNGs",
        epilog=_epilog("project"), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--input", help="point cloud file (.off or .ply)")
    p.add_argument("--synthetic", metavar="CLASS",
                   help="render a synthetic primitive instead of a file")
    p.add_argument("--points", type=int, help="subsample to this many points (0 = all)")
    p.add_argument("--resolution", type=int, help="depth map resolution")
    p.add_argument("--splat-radius", type=int, help="Chebyshev splat radius")
    p.add_argument("--views", help="comma-separated view subset")
    p.add_argument("--seed", type=int, help="sampling seed")
    p.set_defaults(func=cmd_project)

    p = subs.add_parser(
        "pretrain", help="train the translation network on mask/RGB pairs",
        epilog=_epilog("pretrain"), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--renders", metavar="DIR", help="directory of RGBA PNG renders")
    p.add_argument("--synthetic", action="store_true",
                   help="use a generated synthetic render corpus")
    p.add_argument("--n-renders", type=int, help="synthetic corpus size")
    p.add_argument("--resolution", type=int, help="training resolution")
    p.add_argument("--steps", type=int, help="stop after this many optimizer steps")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-mode", choices=("exact", "bernoulli"))
    p.set_defaults(func=cmd_pretrain)

    p = subs.add_parser(
        "fewshot", help="train an adapter head on an N-way K-shot episode",
        epilog=_epilog("fewshot"), formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_dataset_flags(p)
    p.add_argument("--translator", metavar="CKPT", help="translator checkpoint")
    p.add_argument("--no-translate", action="store_true",
                   help="bypass translation (feed raw depth renders to the encoder)")
    p.add_argument("--shots", type=int, help="K (shots per class)")
    p.add_argument("--n-way", type=int, help="N (classes per episode; 0 = all)")
    p.add_argument("--head", choices=("viewpoint", "interview"))
    p.add_argument("--mode", choices=("both", "view_only", "global_only"))
    p.add_argument("--prompt", help="text prompt template with [CLASS]")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, help="episode + training seed")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_fewshot)

    p = subs.add_parser(
        "zeroshot", help="zero-shot evaluation with the cosine head",
        epilog=_epilog("zeroshot"), formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_dataset_flags(p)
    p.add_argument("--translator", metavar="CKPT", help="translator checkpoint")
    p.add_argument("--no-translate", action="store_true")
    p.add_argument("--prompt", help="text prompt template with [CLASS]")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_zeroshot)

    p = subs.add_parser(
        "eval", help="evaluate a trained bundle on a dataset",
        epilog=_epilog("eval"), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--bundle", metavar="CKPT", help="bundle checkpoint to evaluate")
    _add_dataset_flags(p)
    p.add_argument("--format", choices=("json", "csv", "both"))
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser(
        "ablate", help="run an ablation table (adapter modes, prompts, translation, shots)",
        epilog=_epilog("ablate"), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--mode", choices=("modes", "table5", "prompts", "translation", "shots"),
                   help="which ablation to run (table5 is an alias for modes)")
    p.add_argument("--shots", help="comma-separated shot counts for --mode shots")
    p.add_argument("--prompts", action="append", metavar="TEMPLATE",
                   help="prompt template for --mode prompts (repeatable)")
    _add_dataset_flags(p)
    p.add_argument("--translator", metavar="CKPT", help="translator checkpoint")
    p.add_argument("--no-translate", action="store_true")
    p.add_argument("--k-shot", type=int, help="episode shots per class")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, help="episode + training seed")
    p.add_argument("--prompt", help="base prompt template")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = subs.add_parser(
        "plot", help="plot accuracy vs. shots from report JSON files",
        epilog=_epilog("plot"), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--reports", action="append", metavar="REPORT_JSON",
                   help="report file (repeatable; reports concatenate in order)")
    p.set_defaults(func=cmd_plot)

    for sub in subs.choices.values():
        _add_common(sub)
    return parser


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", metavar="DIR", help="dataset directory (class subdirs)")
    p.add_argument("--synthetic", action="store_true", help="use the synthetic fixture")
    p.add_argument("--classes", help="synthetic classes, comma-separated")
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--points", type=int, help="points sampled per cloud")

def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("toy", "clip"))
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--clip-weights", metavar="DIR", help="local CLIP weights path")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_help(file=sys.stderr)
        return 2
    import torch

    torch.set_num_threads(1)
    try:
        return args.func(args)
    except (ParseError, ValidationError, FileNotFoundError,
            IsADirectoryError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run(argv=None) -> None:
    """Console-script entry point."""
    sys.exit(main(argv))


# ---------------------------------------------------------------------------
# Shared wiring
# ---------------------------------------------------------------------------

_DATASET_FLAGS = [("data", "dataset.path"), ("classes", "dataset.classes"),
                  ("n_per_class", "dataset.n_per_class"), ("points", "dataset.points")]
_BACKEND_FLAGS = [("backend", "backend.name"), ("feature_dim", "backend.feature_dim"),
                  ("temperature", "backend.temperature"),
                  ("clip_weights", "backend.clip_weights_path")]


def _resolve(args, command: str, flag_pairs) -> tuple[dict, bool]:
    """Resolve the run config; returns (config, resumed_from_manifest)."""
    if args.from_manifest:
        manifest = load_manifest(args.from_manifest)
        if manifest["command"] != command:
            raise ValidationError(
                f"manifest was written by {manifest['command']!r}, not {command!r}"
            )
        return validate_config(manifest["config"]), True
    overrides = list(args.set)
    for attr, key in flag_pairs:
        value = getattr(args, attr, None)
        if value is not None and value is not False:
            overrides.append(f"{key}={value}")
    return resolve_config(args.config, overrides=overrides), False


def _out_dir(args, command: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_dataset(config) -> tuple[ds.LabeledDataset, str]:
    source = config["dataset.source"]
    n_points = config["dataset.points"]
    seed = config["dataset.seed"]
    if source == "synthetic":
        classes = [c.strip() for c in config["dataset.classes"].split(",") if c.strip()]
        data = ds.make_synthetic_shapes(
            classes, config["dataset.n_per_class"],
            points_per_cloud=max(1, n_points), seed=seed,
        )
        data = ds.normalize_dataset(data)
        dataset_id = (
            f"synthetic:{','.join(sorted(classes))}"
            f":n={config['dataset.n_per_class']}:seed={seed}"
        )
        return data, dataset_id
    if source == "directory":
        path = config["dataset.path"]
        if not path:
            raise ValidationError("dataset.path is required for dataset.source=directory")
        data = ds.load_dataset(path, "directory")
        clouds = []
        for i, cloud in enumerate(data.clouds):
            if n_points > 0 and cloud.points.shape[0] > n_points:
                cloud = ds.sample_points(cloud, n_points, seed=seed + i)
            clouds.append(ds.normalize_unit_cube(cloud))
        return ds.LabeledDataset(tuple(clouds), data.class_names), str(path)
    raise ValidationError(f"unknown dataset.source {source!r}")


def _build_backend(config):
    name = config["backend.name"]
    if name == "clip":
        backend = {"name": "clip", "clip_weights_path": config["backend.clip_weights_path"]}
    else:
        backend = {
            "name": "toy",
            "feature_dim": config["backend.feature_dim"],
            "seed": config["backend.seed"],
            "input_resolution": config["backend.input_resolution"],
        }
    visual, text = make_backend(**backend)
    return visual, text, backend


def _projection_config(config) -> ProjectionConfig:
    views = tuple(v.strip() for v in config["projection.views"].split(",") if v.strip())
    return ProjectionConfig(
        views=views,
        resolution=config["projection.resolution"],
        splat_radius=config["projection.splat_radius"],
    )


def _load_or_build_translator(config, translate: bool, require_checkpoint: bool):
    """Translator per config: a checkpoint if given, a fresh seeded net else."""
    if not translate:
        return None
    checkpoint = config["translator.checkpoint"]
    if checkpoint:
        if not Path(checkpoint).exists():
            raise FileNotFoundError(f"no such translator checkpoint: {checkpoint}")
        translator, _ = load_translator(checkpoint)
        return translator
    if require_checkpoint:
        raise ValidationError(
            "fewshot needs --translator CKPT (or --no-translate for the raw-depth arm)"
        )
    return Translator(
        TranslatorConfig(
            depth_levels=config["translator.depth_levels"],
            base_channels=config["translator.base_channels"],
        ),
        seed=config["translator.seed"],
    )


def _optimizer_config(config, prefix: str) -> OptimizerConfig:
    lr_key = "learning_rate"
    return OptimizerConfig(
        algorithm=config[f"{prefix}.algorithm"],
        learning_rate=config[f"{prefix}.{lr_key}"],
        weight_decay=config[f"{prefix}.weight_decay"],
        epochs=config[f"{prefix}.epochs"],
        batch_size=config[f"{prefix}.batch_size"],
        seed=config[f"{prefix}.seed"],
    )


def _emit(reports, config, out: Path) -> list[Path]:
    fmt = config["report.format"]
    written = []
    if fmt in ("json", "both"):
        written += ev.emit_report(reports, "json", out / "report.json")
    if fmt in ("csv", "both"):
        written += ev.emit_report(reports, "csv", out / "report.csv")
    if fmt not in ("json", "csv", "both"):
        raise ValidationError(f"unknown report.format {fmt!r}")
    return written


def _make_context(config, dataset, dataset_id, translator, visual, text, backend,
                  translate: bool) -> ev.AblationContext:
    hidden = config["fewshot.hidden_dim"]
    return ev.AblationContext(
        dataset=dataset,
        projection=_projection_config(config),
        translator=translator,
        visual_encoder=visual,
        text_encoder=text,
        backend=backend,
        prompt=config["prompt.template"],
        opt=_optimizer_config(config, "fewshot"),
        temperature=config["backend.temperature"],
        k_shot=config["episode.k_shot"],
        seed=config["episode.seed"],
        dataset_id=dataset_id,
        hidden_dim=hidden if hidden > 0 else None,
        translate=translate,
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_project(args) -> int:
    flags = [("input", "dataset.path"), ("points", "dataset.points"),
             ("resolution", "projection.resolution"),
             ("splat_radius", "projection.splat_radius"),
             ("views", "projection.views"), ("seed", "dataset.seed")]
    if getattr(args, "synthetic", None):
        flags.append(("synthetic", "dataset.classes"))
    config, resumed = _resolve(args, "project", flags)
    if not resumed:
        if args.input:
            config["dataset.source"] = "file"
        elif args.synthetic:
            config["dataset.source"] = "synthetic"
        elif config["dataset.path"]:
            config["dataset.source"] = "file"
    start = time.perf_counter()
    out = _out_dir(args, "project")

    if config["dataset.source"] == "file":
        path = Path(config["dataset.path"])
        if not path.exists():
            raise FileNotFoundError(f"no such point cloud file: {path}")
        if path.suffix.lower() == ".off":
            points = ds.read_off(path)
        elif path.suffix.lower() == ".ply":
            points = ds.read_ply(path)
        else:
            raise ValidationError(f"unsupported cloud format {path.suffix!r}")
        cloud = ds.PointCloud(points, label=None, class_name=path.stem)
        source_id = str(path)
    else:
        classes = [c.strip() for c in config["dataset.classes"].split(",") if c.strip()]
        shapes = ds.make_synthetic_shapes(
            classes[:1], 1, points_per_cloud=max(1, config["dataset.points"]),
            seed=config["dataset.seed"],
        )
        cloud = shapes.clouds[0]
        source_id = f"synthetic:{classes[0]}"

    n = config["dataset.points"]
    if n > 0 and cloud.points.shape[0] > n:
        cloud = ds.sample_points(cloud, n, seed=config["dataset.seed"])
    cloud = ds.normalize_unit_cube(cloud)

    projection = _projection_config(config)
    depth = _render_views(cloud, projection, args.jobs)

    outputs = []
    for i, view in enumerate(depth.view_ids):
        png = out / f"{view}.png"
        save_depth_png(depth.maps[i], png)
        outputs.append(png)
    ckpt = out / "depth.ckpt"
    save_container(
        ckpt, "depth_maps",
        {"views": list(depth.view_ids), "resolution": projection.resolution,
         "splat_radius": projection.splat_radius, "source": source_id},
        {"maps": depth.maps},
    )
    outputs.append(ckpt)
    write_manifest(
        out, "project", config, outputs,
        component_hashes={"depth_maps": sha256_arrays({"maps": depth.maps})},
        seeds={"dataset": config["dataset.seed"]},
        wall_clock_sec=time.perf_counter() - start,
    )
    print(f"rendered {len(depth.view_ids)} views of {source_id} -> {out}")
    return 0


def _render_views(cloud, config: ProjectionConfig, jobs: int) -> DepthMapSet:
    if jobs <= 1 or len(config.views) == 1:
        return project_views(cloud, config)

    def one(view: str) -> np.ndarray:
        single = ProjectionConfig(
            views=(view,), resolution=config.resolution,
            splat_radius=config.splat_radius,
        )
        return project_views(cloud, single).maps[0]

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        maps = list(pool.map(one, config.views))
    return DepthMapSet(np.stack(maps), config.views)


def cmd_pretrain(args) -> int:
    flags = [("renders", "pretrain.renders_dir"), ("n_renders", "pretrain.n_renders"),
             ("resolution", "pretrain.resolution"), ("steps", "pretrain.steps"),
             ("epochs", "pretrain.epochs"), ("batch_size", "pretrain.batch_size"),
             ("lr", "pretrain.learning_rate"), ("seed", "pretrain.seed"),
             ("noise_mode", "pretrain.noise_mode")]
    config, resumed = _resolve(args, "pretrain", flags)
    if not resumed and not config["pretrain.renders_dir"] and not args.synthetic:
        print("error: pretrain needs --renders DIR or --synthetic", file=sys.stderr)
        return 2
    start = time.perf_counter()
    out = _out_dir(args, "pretrain")

    resolution = config["pretrain.resolution"]
    seed = config["pretrain.seed"]
    noise_mode = config["pretrain.noise_mode"]
    if config["pretrain.renders_dir"]:
        pairs = build_pretraining_set(
            config["pretrain.renders_dir"], resolution=resolution, seed=seed,
            noise_mode=noise_mode,
        )
    else:
        renders = make_synthetic_renders(config["pretrain.n_renders"], resolution, seed)
        pairs = [
            make_render_pair(r, seed=seed + i, resolution=resolution, noise_mode=noise_mode)
            for i, r in enumerate(renders)
        ]

    steps = config["pretrain.steps"]
    epochs = config["pretrain.epochs"]
    if steps > 0:
        epochs = max(epochs, steps)  # the step cap cuts the loop short
    opt = OptimizerConfig(
        algorithm=config["pretrain.algorithm"],
        learning_rate=config["pretrain.learning_rate"],
        weight_decay=config["pretrain.weight_decay"],
        epochs=epochs, batch_size=config["pretrain.batch_size"], seed=seed,
    )
    translator = Translator(
        TranslatorConfig(
            depth_levels=config["translator.depth_levels"],
            base_channels=config["translator.base_channels"],
        ),
        seed=config["translator.seed"],
    )
    translator, curve = pretrain(translator, pairs, opt, max_steps=steps or None)

    ckpt = out / "translator.ckpt"
    save_translator(translator, ckpt, epoch=len(curve))
    loss_csv = out / "loss.csv"
    write_loss_curve(curve, loss_csv)
    final_loss = curve[-1] if curve else None
    corpus_hash = sha256_arrays(
        {f"pair{i}.input": p.input for i, p in enumerate(pairs)}
        | {f"pair{i}.target": p.target for i, p in enumerate(pairs)}
    )
    write_manifest(
        out, "pretrain", config, [ckpt, loss_csv],
        component_hashes={"translator_params": translator.params_hash(),
                          "corpus": corpus_hash},
        seeds={"pretrain": seed, "translator_init": config["translator.seed"]},
        metrics={} if final_loss is None else {"final_loss": final_loss},
        wall_clock_sec=time.perf_counter() - start,
    )
    if final_loss is None:
        print(f"pretrain: 0 steps (init-only checkpoint) -> {ckpt}")
    else:
        print(f"pretrain: {len(pairs)} pairs, final loss {final_loss:.3e} -> {ckpt}")
    return 0


def cmd_fewshot(args) -> int:
    flags = _DATASET_FLAGS + _BACKEND_FLAGS + [
        ("translator", "translator.checkpoint"), ("shots", "episode.k_shot"),
        ("n_way", "episode.n_way"), ("head", "fewshot.head"),
        ("mode", "fewshot.mode"), ("prompt", "prompt.template"),
        ("epochs", "fewshot.epochs"), ("batch_size", "fewshot.batch_size"),
        ("lr", "fewshot.learning_rate"),
    ]
    config, resumed = _resolve(args, "fewshot", flags)
    if not resumed:
        if args.no_translate:
            config["fewshot.translate"] = False
        if args.seed is not None:
            config["episode.seed"] = args.seed
            config["fewshot.seed"] = args.seed
        if args.data:
            config["dataset.source"] = "directory"
    start = time.perf_counter()
    out = _out_dir(args, "fewshot")

    dataset, dataset_id = _build_dataset(config)
    translate = config["fewshot.translate"]
    translator = _load_or_build_translator(config, translate, require_checkpoint=True)
    visual, text, backend = _build_backend(config)
    projection = _projection_config(config)

    n_way = config["episode.n_way"] or len(dataset.class_names)
    spec = ds.EpisodeSpec(n_way=n_way, k_shot=config["episode.k_shot"],
                          seed=config["episode.seed"])
    episode, residual = ds.sample_few_shot(dataset, spec)
    if len(residual) == 0:
        raise ValidationError(
            f"k_shot={spec.k_shot} consumes every instance; nothing left to evaluate"
        )

    hidden = config["fewshot.hidden_dim"]
    bundle = train_few_shot(
        episode, config["fewshot.head"], config["fewshot.mode"],
        projection=projection, translator=translator, visual_encoder=visual,
        text_encoder=text, prompt=config["prompt.template"],
        opt=_optimizer_config(config, "fewshot"),
        temperature=config["backend.temperature"], translate=translate,
        backend=backend, hidden_dim=hidden if hidden > 0 else None,
    )
    ckpt = out / "bundle.ckpt"
    save_bundle(bundle, ckpt)
    log_csv = out / "training_log.csv"
    write_training_log(bundle.training_log, log_csv)

    report = ev.evaluate(
        bundle, residual, dataset_id=dataset_id, shots=spec.k_shot,
        extra_metadata={"paper_reference_full_scale":
                        ev.PAPER_REFERENCE_FULL_SCALE["few_shot_16_modelnet40"]},
    )
    outputs = [ckpt, log_csv] + _emit([report], config, out)

    final_train_acc = bundle.training_log[-1][2] if bundle.training_log else None
    metrics = {"accuracy": report.accuracy}
    if final_train_acc is not None:
        metrics["final_train_acc"] = final_train_acc
    write_manifest(
        out, "fewshot", config, outputs,
        component_hashes={
            "bundle": sha256_file(ckpt),
            "translator_params": translator.params_hash() if translator else "",
            "dataset_fingerprint": bundle.dataset_fingerprint,
        },
        seeds={"episode": spec.seed, "fewshot": config["fewshot.seed"]},
        metrics=metrics,
        wall_clock_sec=time.perf_counter() - start,
    )
    print(
        f"fewshot: {spec.n_way}-way {spec.k_shot}-shot {config['fewshot.head']}"
        f"/{config['fewshot.mode']}: residual accuracy {report.accuracy:.2f}% "
        f"({report.n_samples} samples) -> {out}"
    )
    return 0


def cmd_zeroshot(args) -> int:
    flags = _DATASET_FLAGS + _BACKEND_FLAGS + [
        ("translator", "translator.checkpoint"), ("prompt", "prompt.template"),
    ]
    config, resumed = _resolve(args, "zeroshot", flags)
    if not resumed:
        if args.no_translate:
            config["fewshot.translate"] = False
        if args.data:
            config["dataset.source"] = "directory"
    start = time.perf_counter()
    out = _out_dir(args, "zeroshot")

    dataset, dataset_id = _build_dataset(config)
    translate = config["fewshot.translate"]
    translator = _load_or_build_translator(config, translate, require_checkpoint=False)
    visual, text, backend = _build_backend(config)
    ctx = _make_context(config, dataset, dataset_id, translator, visual, text,
                        backend, translate)
    report = ev.run_zero_shot(ctx)
    outputs = _emit([report], config, out)
    write_manifest(
        out, "zeroshot", config, outputs,
        component_hashes={
            "translator_params": translator.params_hash() if translator else "",
        },
        seeds={"backend": config["backend.seed"]},
        metrics={"accuracy": report.accuracy},
        wall_clock_sec=time.perf_counter() - start,
    )
    print(f"zeroshot: accuracy {report.accuracy:.2f}% ({report.n_samples} samples) -> {out}")
    return 0


def cmd_eval(args) -> int:
    flags = _DATASET_FLAGS + [("bundle", "eval.bundle"), ("format", "report.format")]
    config, resumed = _resolve(args, "eval", flags)
    if not resumed and args.data:
        config["dataset.source"] = "directory"
    start = time.perf_counter()
    out = _out_dir(args, "eval")

    bundle_path = config["eval.bundle"]
    if not bundle_path:
        print("error: eval needs --bundle CKPT", file=sys.stderr)
        return 2
    if not Path(bundle_path).exists():
        raise FileNotFoundError(f"no such bundle checkpoint: {bundle_path}")
    bundle = load_bundle(bundle_path)
    dataset, dataset_id = _build_dataset(config)
    report = ev.evaluate(bundle, dataset, dataset_id=dataset_id)
    outputs = _emit([report], config, out)
    write_manifest(
        out, "eval", config, outputs,
        component_hashes={"bundle": sha256_file(bundle_path)},
        metrics={"accuracy": report.accuracy},
        wall_clock_sec=time.perf_counter() - start,
    )
    print(f"eval: accuracy {report.accuracy:.2f}% ({report.n_samples} samples) -> {out}")
    return 0


def cmd_ablate(args) -> int:
    flags = _DATASET_FLAGS + _BACKEND_FLAGS + [
        ("translator", "translator.checkpoint"), ("shots", "eval.shots"),
        ("k_shot", "episode.k_shot"), ("epochs", "fewshot.epochs"),
        ("prompt", "prompt.template"),
    ]
    config, resumed = _resolve(args, "ablate", flags)
    if not resumed:
        if args.mode:
            config["ablate.mode"] = "modes" if args.mode == "table5" else args.mode
        if args.prompts:
            config["ablate.prompts"] = "|".join(args.prompts)
        if args.no_translate:
            config["fewshot.translate"] = False
        if args.seed is not None:
            config["episode.seed"] = args.seed
            config["fewshot.seed"] = args.seed
        if args.data:
            config["dataset.source"] = "directory"
    start = time.perf_counter()
    out = _out_dir(args, "ablate")

    dataset, dataset_id = _build_dataset(config)
    translate = config["fewshot.translate"]
    translator = _load_or_build_translator(config, translate, require_checkpoint=False)
    visual, text, backend = _build_backend(config)
    ctx = _make_context(config, dataset, dataset_id, translator, visual, text,
                        backend, translate)

    mode = config["ablate.mode"]
    outputs: list[Path] = []
    if mode == "modes":
        reports = ev.ablate_adapter_modes(ctx, jobs=args.jobs)
        row_metrics = {r.mode: r.accuracy for r in reports}
    elif mode == "prompts":
        raw = config["ablate.prompts"]
        templates = [t for t in raw.split("|") if t] if raw else list(ev.PROMPT_TABLE_TEMPLATES)
        reports = ev.prompt_ablation(ctx, templates, jobs=args.jobs)
        row_metrics = {r.prompt: r.accuracy for r in reports}
    elif mode == "translation":
        reports = ev.ablate_translation(ctx, jobs=args.jobs)
        row_metrics = {("on" if r.translate else "off"): r.accuracy for r in reports}
    elif mode == "shots":
        shots = [int(s) for s in config["eval.shots"].split(",") if s.strip()]
        reports = ev.shot_curve(ctx, shots, jobs=args.jobs)
        row_metrics = {str(r.shots): r.accuracy for r in reports}
        outputs += ev.write_shot_plot(reports, out / "curve.png")
    else:
        raise ValidationError(f"unknown ablate.mode {mode!r}")

    outputs = _emit(reports, config, out) + outputs
    write_manifest(
        out, "ablate", config, outputs,
        component_hashes={
            "translator_params": translator.params_hash() if translator else "",
        },
        seeds={"episode": config["episode.seed"], "fewshot": config["fewshot.seed"]},
        metrics={"accuracies": row_metrics},
        wall_clock_sec=time.perf_counter() - start,
    )
    print(f"ablate {mode}: " + ", ".join(f"{k}={v:.2f}%" for k, v in row_metrics.items()))
    return 0


def cmd_plot(args) -> int:
    config, resumed = _resolve(args, "plot", [])
    if not resumed and args.reports:
        config["plot.reports"] = ",".join(args.reports)
    start = time.perf_counter()
    out = _out_dir(args, "plot")

    paths = [p for p in config["plot.reports"].split(",") if p]
    if not paths:
        print("error: plot needs --reports REPORT_JSON", file=sys.stderr)
        return 2
    reports = []
    for p in paths:
        if not Path(p).exists():
            raise FileNotFoundError(f"no such report file: {p}")
        reports.extend(ev.reports_from_json(p))
    outputs = ev.write_shot_plot(reports, out / "curve.png")
    write_manifest(
        out, "plot", config, outputs,
        wall_clock_sec=time.perf_counter() - start,
    )
    print(f"plotted {len(reports)} reports -> {out / 'curve.png'}")
    return 0


if __name__ == "__main__":
    run()
