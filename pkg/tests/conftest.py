"""Shared desk-scale fixtures.

Everything here is deterministic: fixed seeds, fixed shapes, fixed
recipes. The expensive pieces (the pre-trained translator, the synthetic
datasets) are session-scoped so the suite pays for them once.
"""

import numpy as np
import pytest
import torch

from pointshot import dataset as ds
from pointshot.encoders import make_backend
from pointshot.maskprep import make_render_pair, make_synthetic_renders
from pointshot.projection import ProjectionConfig
from pointshot.trainer import OptimizerConfig
from pointshot.translator import Translator, TranslatorConfig, pretrain

RESOLUTION = 32
FEATURE_DIM = 16
PROMPT = "point cloud of a big [CLASS]."
DESK_CLASSES = ("cube", "plane", "sphere")


@pytest.fixture(scope="session", autouse=True)
def single_thread_torch():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def projection_config():
    return ProjectionConfig(resolution=RESOLUTION, splat_radius=1)


@pytest.fixture(scope="session")
def toy_backend():
    visual, text = make_backend(
        "toy", feature_dim=FEATURE_DIM, seed=0, input_resolution=RESOLUTION
    )
    spec = {
        "name": "toy",
        "feature_dim": FEATURE_DIM,
        "seed": 0,
        "input_resolution": RESOLUTION,
    }
    return visual, text, spec


@pytest.fixture(scope="session")
def pretrain_corpus():
    renders = make_synthetic_renders(8, resolution=RESOLUTION, seed=0)
    return [
        make_render_pair(r, seed=i, resolution=RESOLUTION) for i, r in enumerate(renders)
    ]


@pytest.fixture(scope="session")
def pretrained_translator(pretrain_corpus):
    """The 500-step overfit run; also the subject of acceptance criterion 6."""
    import time

    translator = Translator(TranslatorConfig(), seed=0)
    opt = OptimizerConfig(
        algorithm="adam", learning_rate=3e-3, weight_decay=0.0, epochs=500,
        batch_size=16, seed=0,
    )
    start = time.perf_counter()
    translator, curve = pretrain(translator, pretrain_corpus, opt, max_steps=500)
    elapsed = time.perf_counter() - start
    return translator, curve, elapsed


@pytest.fixture(scope="session")
def desk_dataset():
    """3 classes x 20 clouds: the 16-shot fixture (train 48, residual 12)."""
    data = ds.make_synthetic_shapes(DESK_CLASSES, 20, points_per_cloud=768, seed=0)
    return ds.normalize_dataset(data)


@pytest.fixture(scope="session")
def wide_dataset():
    """3 classes x 64 clouds: residual sets big enough for sub-pp accuracy steps."""
    data = ds.make_synthetic_shapes(DESK_CLASSES, 64, points_per_cloud=512, seed=0)
    return ds.normalize_dataset(data)


@pytest.fixture(scope="session")
def desk_opt():
    return OptimizerConfig(
        algorithm="adamw", learning_rate=2e-2, weight_decay=1e-4, epochs=300,
        batch_size=32, seed=0,
    )


@pytest.fixture(scope="session")
def desk_episode(desk_dataset):
    return ds.sample_few_shot(desk_dataset, ds.EpisodeSpec(n_way=3, k_shot=16, seed=0))


@pytest.fixture(scope="session")
def trained_bundle(desk_episode, projection_config, pretrained_translator, toy_backend, desk_opt):
    from pointshot.trainer import train_few_shot

    episode, _ = desk_episode
    visual, text, spec = toy_backend
    translator, _, _ = pretrained_translator
    return train_few_shot(
        episode, "viewpoint", "both",
        projection=projection_config, translator=translator, visual_encoder=visual,
        text_encoder=text, prompt=PROMPT, opt=desk_opt, backend=spec,
    )


def rng(seed=0):
    return np.random.default_rng(seed)
