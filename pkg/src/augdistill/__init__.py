"""Knowledge distillation with a learnable, priori-biased augmentation search."""

__version__ = "0.1.0"

from .augment import (
    PolicySelection,
    combine_affine,
    encode,
    encode_classification,
    encode_detection,
    select_subpolicies,
)
from .config import ExperimentConfig, load_config, parse_config
from .datasets import DataSplits, provide_dataset
from .encoders import AffineEncoder, ColorEncoder, MetaEncoderSet
from .estimator import DistilledClassifier, LearnedAugmenter
from .exceptions import ConfigError, FitFailure, TrainingDiverged
from .losses import (
    LossWeights,
    convexity_check,
    encoder_fit_loss,
    kd_total_loss,
    tst_search_loss,
)
from .models import ModelSpec, build_model, pretrain_teacher
from .policies import POLICIES, POLICY_NAMES, SubPolicy, apply_manual
from .record import RunRecord, export_curves
from .sampling import AugmentParams, SampledParams, rbd, sample_params
from .trainer import (
    TrainConfig,
    TrainingLoop,
    run_training,
    stage1_fit_encoders,
    stage2_search,
    stage3_step,
    teacher_confidence,
)

__all__ = [
    "AffineEncoder",
    "AugmentParams",
    "ColorEncoder",
    "ConfigError",
    "DataSplits",
    "DistilledClassifier",
    "ExperimentConfig",
    "FitFailure",
    "LearnedAugmenter",
    "LossWeights",
    "MetaEncoderSet",
    "ModelSpec",
    "POLICIES",
    "POLICY_NAMES",
    "PolicySelection",
    "RunRecord",
    "SampledParams",
    "SubPolicy",
    "TrainConfig",
    "TrainingDiverged",
    "TrainingLoop",
    "apply_manual",
    "build_model",
    "combine_affine",
    "convexity_check",
    "encode",
    "encode_classification",
    "encode_detection",
    "encoder_fit_loss",
    "export_curves",
    "kd_total_loss",
    "load_config",
    "parse_config",
    "pretrain_teacher",
    "provide_dataset",
    "rbd",
    "run_training",
    "sample_params",
    "select_subpolicies",
    "stage1_fit_encoders",
    "stage2_search",
    "stage3_step",
    "teacher_confidence",
    "tst_search_loss",
]
