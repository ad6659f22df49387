"""Module with encoders, aggregation, losses and the experiment harness."""
from .encoders import (
    VARIANT_NAMES,
    BasicBlock,
    ConvBnAct,
    EncoderVariant,
    FeatureMatrix,
    Kind,
    ResNetEncoder,
    StagePlan,
    Stem,
    build_variant,
    choose_mid_channels,
    count_params,
    describe,
    describe_table,
    encode,
    plan_for,
    slice_head,
)
from .aggregation import (
    AGGREGATORS,
    AggregatorKind,
    VolumeHead,
    aggregate,
    attention_weights,
    bilinear_logit_scale,
    volume_head,
)
from .losses import (
    MINING_MODES,
    RECIPES,
    CenterState,
    LabeledBatch,
    LossConfig,
    center_loss,
    focal_loss,
    joint_loss,
    mine_triplets,
    triplet_loss_batch_hard,
)
from .classifier import Classifier, SliceClassifier, VolumeClassifier, build_classifier
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    TrainingDivergedError,
    run_ablation,
    run_experiment,
)

__all__ = [
    "VARIANT_NAMES",
    "BasicBlock",
    "ConvBnAct",
    "EncoderVariant",
    "FeatureMatrix",
    "Kind",
    "ResNetEncoder",
    "StagePlan",
    "Stem",
    "build_variant",
    "choose_mid_channels",
    "count_params",
    "describe",
    "describe_table",
    "encode",
    "plan_for",
    "slice_head",
    "AGGREGATORS",
    "AggregatorKind",
    "VolumeHead",
    "aggregate",
    "attention_weights",
    "bilinear_logit_scale",
    "volume_head",
    "MINING_MODES",
    "RECIPES",
    "CenterState",
    "LabeledBatch",
    "LossConfig",
    "center_loss",
    "focal_loss",
    "joint_loss",
    "mine_triplets",
    "triplet_loss_batch_hard",
    "Classifier",
    "SliceClassifier",
    "VolumeClassifier",
    "build_classifier",
    "ExperimentConfig",
    "ExperimentResult",
    "TrainingDivergedError",
    "run_ablation",
    "run_experiment",
]
