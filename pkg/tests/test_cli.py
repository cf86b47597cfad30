import json
import subprocess
import sys

import numpy as np
import pytest

from pointshot.cli import main
from pointshot.containers import load_container
from pointshot.errors import ParseError, ValidationError
from pointshot.manifest import (
    load_manifest,
    normalize_volatile,
    output_hash,
    parse_config_file,
    resolve_config,
)
from pointshot.translator import Translator, TranslatorConfig, load_translator

# Small-everything overrides shared by the end-to-end command runs.
TINY = [
    "--set", "dataset.n_per_class=4",
    "--set", "dataset.points=128",
    "--set", "projection.resolution=32",
    "--set", "backend.input_resolution=32",
    "--set", "episode.k_shot=2",
    "--set", "fewshot.epochs=3",
]


def run_cli(*argv) -> int:
    return main(list(argv))


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------

def test_resolve_config_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("episode.k_shot = 3\nprompt.template = 'a [CLASS] photo.'\n")
    resolved = resolve_config(
        cfg, overrides=["episode.k_shot=5"],
        environ={"POINTSHOT_EPISODE_K_SHOT": "4", "POINTSHOT_FEWSHOT_EPOCHS": "7"},
    )
    assert resolved["episode.k_shot"] == 5      # override beats env beats file
    assert resolved["fewshot.epochs"] == 7      # env beats default
    assert resolved["prompt.template"] == "a [CLASS] photo."
    assert resolved["episode.n_way"] == 0       # untouched default


def test_resolve_config_types():
    resolved = resolve_config(
        overrides=["fewshot.learning_rate=0.5", "fewshot.translate=false"],
        environ={},
    )
    assert resolved["fewshot.learning_rate"] == 0.5
    assert resolved["fewshot.translate"] is False


def test_resolve_config_unknown_key():
    with pytest.raises(ValidationError):
        resolve_config(overrides=["nonsense.key=1"], environ={})


def test_resolve_config_malformed_override():
    with pytest.raises(ParseError):
        resolve_config(overrides=["episode.k_shot"], environ={})


def test_parse_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\n\nepisode.seed = 9\nprompt.template = \"x [CLASS]\"\n")
    raw = parse_config_file(cfg)
    assert raw == {"episode.seed": "9", "prompt.template": "x [CLASS]"}


def test_parse_config_file_malformed(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("episode.seed 9\n")
    with pytest.raises(ParseError):
        parse_config_file(cfg)


def test_output_hash_ignores_wall_clock(tmp_path):
    a, b, c = tmp_path / "a.json", tmp_path / "b.json", tmp_path / "c.json"
    a.write_text(json.dumps({"accuracy": 90.0, "wall_clock_sec": 1.5}))
    b.write_text(json.dumps({"accuracy": 90.0, "wall_clock_sec": 99.0}))
    c.write_text(json.dumps({"accuracy": 91.0, "wall_clock_sec": 1.5}))
    assert output_hash(a) == output_hash(b)
    assert output_hash(a) != output_hash(c)


def test_normalize_volatile_recurses():
    doc = {"wall_clock_sec": 5.0, "inner": [{"wall_clock_sec": 2.0, "x": 1}]}
    assert normalize_volatile(doc) == {
        "wall_clock_sec": 0.0, "inner": [{"wall_clock_sec": 0.0, "x": 1}]
    }


# ---------------------------------------------------------------------------
# Exit codes and usage errors
# ---------------------------------------------------------------------------

def test_no_command_is_usage_error(capsys):
    assert run_cli() == 2


def test_unknown_set_key_is_usage_error(tmp_path, capsys):
    code = run_cli("project", "--synthetic", "cube", "--out", str(tmp_path),
                   "--set", "nonsense.key=1")
    assert code == 2
    assert "nonsense.key" in capsys.readouterr().err


def test_project_missing_input_file(tmp_path, capsys):
    code = run_cli("project", "--input", str(tmp_path / "missing.off"),
                   "--out", str(tmp_path / "out"))
    assert code == 2
    assert "missing.off" in capsys.readouterr().err


def test_pretrain_requires_corpus(tmp_path, capsys):
    code = run_cli("pretrain", "--out", str(tmp_path))
    assert code == 2
    assert "--renders" in capsys.readouterr().err


def test_fewshot_requires_translator(tmp_path, capsys):
    code = run_cli("fewshot", "--out", str(tmp_path), *TINY)
    assert code == 2
    assert "--translator" in capsys.readouterr().err


def test_eval_requires_bundle(tmp_path, capsys):
    code = run_cli("eval", "--out", str(tmp_path), *TINY)
    assert code == 2
    assert "--bundle" in capsys.readouterr().err


def test_plot_requires_reports(tmp_path, capsys):
    code = run_cli("plot", "--out", str(tmp_path))
    assert code == 2


def test_help_epilog_documents_config_keys(capsys):
    with pytest.raises(SystemExit) as excinfo:
        run_cli("fewshot", "--help")
    assert excinfo.value.code == 0
    text = capsys.readouterr().out
    assert "fewshot.learning_rate" in text
    assert "episode.k_shot" in text


# ---------------------------------------------------------------------------
# project
# ---------------------------------------------------------------------------

def test_project_synthetic(tmp_path, capsys):
    out = tmp_path / "proj"
    code = run_cli("project", "--synthetic", "cube", "--points", "64",
                   "--resolution", "16", "--out", str(out))
    assert code == 0
    for view in ("front", "back", "left", "right", "top", "bottom"):
        assert (out / f"{view}.png").exists()
    kind, meta, arrays = load_container(out / "depth.ckpt")
    assert kind == "depth_maps"
    assert arrays["maps"].shape == (6, 16, 16)
    manifest = load_manifest(out / "manifest.json")
    assert manifest["command"] == "project"
    assert manifest["config"]["projection.resolution"] == 16
    assert set(manifest["outputs"]) == {
        "front.png", "back.png", "left.png", "right.png", "top.png",
        "bottom.png", "depth.ckpt",
    }


def test_project_off_file(tmp_path):
    off = tmp_path / "shape.off"
    points = np.random.default_rng(0).uniform(-1, 1, size=(50, 3))
    lines = ["OFF", f"{len(points)} 0 0"]
    lines += [" ".join(f"{v:.6f}" for v in p) for p in points]
    off.write_text("\n".join(lines) + "\n")
    out = tmp_path / "proj"
    code = run_cli("project", "--input", str(off), "--resolution", "16",
                   "--out", str(out))
    assert code == 0
    _, meta, _ = load_container(out / "depth.ckpt")
    assert meta["source"].endswith("shape.off")


def test_project_view_subset(tmp_path):
    out = tmp_path / "proj"
    code = run_cli("project", "--synthetic", "sphere", "--points", "64",
                   "--resolution", "16", "--views", "front,top", "--out", str(out))
    assert code == 0
    assert (out / "front.png").exists() and (out / "top.png").exists()
    assert not (out / "back.png").exists()


def test_project_parallel_matches_serial(tmp_path):
    serial = tmp_path / "serial"
    parallel = tmp_path / "parallel"
    for out, jobs in ((serial, "1"), (parallel, "3")):
        assert run_cli("project", "--synthetic", "plane", "--points", "64",
                       "--resolution", "16", "--out", str(out), "--jobs", jobs) == 0
    _, _, a = load_container(serial / "depth.ckpt")
    _, _, b = load_container(parallel / "depth.ckpt")
    np.testing.assert_array_equal(a["maps"], b["maps"])


# ---------------------------------------------------------------------------
# pretrain
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pretrain_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("pretrain")
    code = main([
        "pretrain", "--synthetic", "--n-renders", "2", "--resolution", "32",
        "--steps", "5", "--out", str(out),
    ])
    assert code == 0
    return out


def test_pretrain_outputs(pretrain_run):
    assert (pretrain_run / "translator.ckpt").exists()
    lines = (pretrain_run / "loss.csv").read_text().strip().splitlines()
    assert lines[0] == "epoch,loss"
    assert len(lines) == 6  # 5 capped steps at one step per epoch
    manifest = load_manifest(pretrain_run / "manifest.json")
    assert manifest["metrics"]["final_loss"] > 0
    assert manifest["component_hashes"]["translator_params"]


def test_pretrain_zero_epochs_checkpoint_is_init(tmp_path):
    out = tmp_path / "init"
    code = run_cli("pretrain", "--synthetic", "--n-renders", "2",
                   "--resolution", "32", "--epochs", "0", "--out", str(out))
    assert code == 0
    loaded, epoch = load_translator(out / "translator.ckpt")
    assert epoch == 0
    fresh = Translator(TranslatorConfig(), seed=0)
    np.testing.assert_array_equal(loaded.flatten_params(), fresh.flatten_params())


# ---------------------------------------------------------------------------
# fewshot / eval / zeroshot
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fewshot_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fewshot")
    code = main(["fewshot", "--no-translate", "--out", str(out), *TINY])
    assert code == 0
    return out


def test_fewshot_outputs(fewshot_run):
    manifest = load_manifest(fewshot_run / "manifest.json")
    assert set(manifest["outputs"]) == {"bundle.ckpt", "training_log.csv", "report.json"}
    assert 0.0 <= manifest["metrics"]["accuracy"] <= 100.0
    lines = (fewshot_run / "training_log.csv").read_text().strip().splitlines()
    assert lines[0] == "epoch,loss,train_acc"
    assert len(lines) == 4  # three epochs
    report = json.loads((fewshot_run / "report.json").read_text())
    assert report["reports"][0]["shots"] == 2


def test_fewshot_seed_flag_sets_both_seeds(tmp_path):
    out = tmp_path / "seeded"
    code = run_cli("fewshot", "--no-translate", "--seed", "7",
                   "--out", str(out), *TINY)
    assert code == 0
    manifest = load_manifest(out / "manifest.json")
    assert manifest["seeds"] == {"episode": 7, "fewshot": 7}
    assert manifest["config"]["episode.seed"] == 7
    assert manifest["config"]["fewshot.seed"] == 7


def test_fewshot_from_manifest_bit_identical(fewshot_run, tmp_path):
    rerun = tmp_path / "rerun"
    code = run_cli("fewshot", "--from-manifest", str(fewshot_run / "manifest.json"),
                   "--out", str(rerun))
    assert code == 0
    first = load_manifest(fewshot_run / "manifest.json")
    second = load_manifest(rerun / "manifest.json")
    assert first["outputs"] == second["outputs"]
    assert first["config_hash"] == second["config_hash"]
    assert (fewshot_run / "bundle.ckpt").read_bytes() == (rerun / "bundle.ckpt").read_bytes()


def test_from_manifest_ignores_environment(fewshot_run, tmp_path, monkeypatch):
    monkeypatch.setenv("POINTSHOT_FEWSHOT_EPOCHS", "1")
    rerun = tmp_path / "rerun"
    code = run_cli("fewshot", "--from-manifest", str(fewshot_run / "manifest.json"),
                   "--out", str(rerun))
    assert code == 0
    manifest = load_manifest(rerun / "manifest.json")
    assert manifest["config"]["fewshot.epochs"] == 3  # from the manifest, not env


def test_from_manifest_command_mismatch(fewshot_run, tmp_path, capsys):
    code = run_cli("zeroshot", "--from-manifest", str(fewshot_run / "manifest.json"),
                   "--out", str(tmp_path / "out"))
    assert code == 2
    assert "fewshot" in capsys.readouterr().err


def test_eval_reuses_bundle(fewshot_run, tmp_path):
    out = tmp_path / "eval"
    code = run_cli("eval", "--bundle", str(fewshot_run / "bundle.ckpt"),
                   "--out", str(out), *TINY)
    assert code == 0
    manifest = load_manifest(out / "manifest.json")
    assert 0.0 <= manifest["metrics"]["accuracy"] <= 100.0
    assert manifest["component_hashes"]["bundle"]


def test_env_layer_feeds_commands(tmp_path, monkeypatch):
    monkeypatch.setenv("POINTSHOT_PROJECTION_RESOLUTION", "16")
    out = tmp_path / "proj"
    code = run_cli("project", "--synthetic", "cube", "--points", "64",
                   "--out", str(out))
    assert code == 0
    _, _, arrays = load_container(out / "depth.ckpt")
    assert arrays["maps"].shape == (6, 16, 16)


def test_zeroshot_runs(tmp_path):
    out = tmp_path / "zs"
    code = run_cli("zeroshot", "--no-translate", "--out", str(out), *TINY)
    assert code == 0
    manifest = load_manifest(out / "manifest.json")
    assert 0.0 <= manifest["metrics"]["accuracy"] <= 100.0
    report = json.loads((out / "report.json").read_text())
    assert report["reports"][0]["shots"] == 0
    assert report["reports"][0]["head_type"] == "zero_shot"


# ---------------------------------------------------------------------------
# ablate / plot
# ---------------------------------------------------------------------------

def test_ablate_modes_three_rows(tmp_path):
    out = tmp_path / "modes"
    code = run_cli("ablate", "--mode", "table5", "--no-translate",
                   "--epochs", "2", "--k-shot", "2", "--out", str(out), *TINY)
    assert code == 0
    manifest = load_manifest(out / "manifest.json")
    assert set(manifest["metrics"]["accuracies"]) == {"view_only", "global_only", "both"}
    report = json.loads((out / "report.json").read_text())
    assert [r["mode"] for r in report["reports"]] == ["view_only", "global_only", "both"]


def test_ablate_shots_writes_curve(tmp_path):
    out = tmp_path / "shots"
    code = run_cli("ablate", "--mode", "shots", "--shots", "1,2", "--no-translate",
                   "--epochs", "2", "--out", str(out), *TINY)
    assert code == 0
    assert (out / "curve.png").exists()
    sidecar = json.loads((out / "curve.json").read_text())
    assert [p["shots"] for p in sidecar["points"]] == [1, 2]
    manifest = load_manifest(out / "manifest.json")
    assert set(manifest["metrics"]["accuracies"]) == {"1", "2"}


def test_ablate_prompts_rows(tmp_path):
    out = tmp_path / "prompts"
    code = run_cli("ablate", "--mode", "prompts",
                   "--prompts", "a [CLASS].", "--prompts", "the [CLASS] shape.",
                   "--no-translate", "--epochs", "2", "--k-shot", "2",
                   "--out", str(out), *TINY)
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert [r["prompt"] for r in report["reports"]] == ["a [CLASS].", "the [CLASS] shape."]


def test_plot_concatenates_reports(fewshot_run, tmp_path):
    out = tmp_path / "plot"
    code = run_cli("plot", "--reports", str(fewshot_run / "report.json"),
                   "--out", str(out))
    assert code == 0
    assert (out / "curve.png").exists()
    sidecar = json.loads((out / "curve.json").read_text())
    assert len(sidecar["points"]) == 1


def test_plot_missing_report(tmp_path, capsys):
    code = run_cli("plot", "--reports", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "out"))
    assert code == 2


# ---------------------------------------------------------------------------
# module entry point
# ---------------------------------------------------------------------------

def test_python_dash_m_entry(tmp_path):
    out = tmp_path / "proj"
    proc = subprocess.run(
        [sys.executable, "-m", "pointshot", "project", "--synthetic", "cube",
         "--points", "64", "--resolution", "16", "--out", str(out)],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "depth.ckpt").exists()
