"""Few-shot point-cloud classification through frozen vision-language encoders.

Pipeline: multi-view orthographic depth rendering (projection), a small
image-to-image translation network bridging the depth/photo domain gap
(translator, pre-trained on noise-masked renders per maskprep), frozen
visual/text encoders (encoders), and lightweight classification heads on
the frozen features (heads) trained a few shots at a time (trainer).
The evaluator and cli modules wrap those stages into reproducible runs.
"""

from .dataset import (
    EpisodeSpec,
    LabeledDataset,
    PointCloud,
    load_dataset,
    make_synthetic_shapes,
    normalize_unit_cube,
    sample_few_shot,
    sample_points,
)
from .encoders import PromptTemplate, make_backend, normalize_rows, toy_encoder
from .errors import ParseError, TrainingDivergedError, ValidationError
from .evaluator import AblationContext, EvalReport, evaluate, shot_curve
from .heads import (
    init_interview_params,
    init_viewpoint_params,
    classify,
    zero_shot_logits,
)
from .projection import DepthMapSet, ProjectionConfig, depth_to_encoder_image, project_views
from .trainer import (
    OptimizerConfig,
    TrainedBundle,
    extract_features,
    load_bundle,
    make_zero_shot_bundle,
    save_bundle,
    train_few_shot,
)
from .translator import Translator, TranslatorConfig, load_translator, pretrain, save_translator

__version__ = "0.1.0"

__all__ = [
    "AblationContext",
    "DepthMapSet",
    "EpisodeSpec",
    "EvalReport",
    "LabeledDataset",
    "OptimizerConfig",
    "ParseError",
    "PointCloud",
    "ProjectionConfig",
    "PromptTemplate",
    "TrainedBundle",
    "TrainingDivergedError",
    "Translator",
    "TranslatorConfig",
    "ValidationError",
    "classify",
    "depth_to_encoder_image",
    "evaluate",
    "extract_features",
    "init_interview_params",
    "init_viewpoint_params",
    "load_bundle",
    "load_dataset",
    "load_translator",
    "make_backend",
    "make_synthetic_shapes",
    "make_zero_shot_bundle",
    "normalize_rows",
    "normalize_unit_cube",
    "pretrain",
    "project_views",
    "sample_few_shot",
    "sample_points",
    "save_bundle",
    "save_translator",
    "shot_curve",
    "toy_encoder",
    "train_few_shot",
    "zero_shot_logits",
    "__version__",
]
