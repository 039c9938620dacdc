"""Feature-space few-shot adaptation: learnable instances, instance
reweighting, and virtual-domain perturbation over a frozen extractor's
embeddings, with an episodic finetuning and evaluation harness."""

__version__ = "0.1.0"

from .episodes import Episode, EpisodeSpec, sample_episode, select_background
from .errors import (
    ConfigError,
    ContractError,
    FormatError,
    GradCheckError,
    InsufficientBackgroundError,
    InsufficientDataError,
    NumericError,
    ProtoAdaptError,
    ShapeError,
    TrainingError,
    ValidationError,
)
from .featurepack import FeaturePack, FeatureRecord, build_pack, load_feature_pack, save_feature_pack
from .training import AdaptationParams, FinetuneConfig, TrainLog, finetune, load_adaptation, save_adaptation

__all__ = [
    "AdaptationParams",
    "ConfigError",
    "ContractError",
    "Episode",
    "EpisodeSpec",
    "FeaturePack",
    "FeatureRecord",
    "FinetuneConfig",
    "FormatError",
    "GradCheckError",
    "InsufficientBackgroundError",
    "InsufficientDataError",
    "NumericError",
    "ProtoAdaptError",
    "ShapeError",
    "TrainLog",
    "TrainingError",
    "ValidationError",
    "build_pack",
    "finetune",
    "load_adaptation",
    "load_feature_pack",
    "sample_episode",
    "save_adaptation",
    "save_feature_pack",
    "select_background",
]
