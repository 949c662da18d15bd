"""Segmentation engine for SegmentMonkey.

Expose convenient imports for data handling, models, training, online
inference and evaluation.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import (
    Dataset,
    FeatureSequence,
    kfold_split,
    load_dataset,
    median_frequency_weights,
    read_sequence,
    subsample,
    write_dataset,
    write_sequence,
)
from .errors import (
    AcceptanceError,
    FormatError,
    InvalidArgumentError,
    NumericError,
    SegmentationError,
    TapeStateError,
)
from .metrics import aggregate_folds, frame_accuracy, joint_accuracy, per_class_prf
from .modelparams import ModelParams, StageOutputs, TcnConfig, build_model, receptive_field
from .online import open_session, predict_online
from .ontology import Ontology, default_ontology
from .ribbon import export_ribbon
from .synthetic import SyntheticSpec, default_synthetic_spec, generate_synthetic
from .training import TrainConfig, multi_task_loss, predict_sequence, train_framewise, train_temporal

__all__ = [
    "AcceptanceError",
    "Dataset",
    "FeatureSequence",
    "FormatError",
    "InvalidArgumentError",
    "ModelParams",
    "NumericError",
    "Ontology",
    "SegmentationError",
    "StageOutputs",
    "SyntheticSpec",
    "TapeStateError",
    "TcnConfig",
    "TrainConfig",
    "aggregate_folds",
    "build_model",
    "default_ontology",
    "default_synthetic_spec",
    "export_ribbon",
    "frame_accuracy",
    "generate_synthetic",
    "joint_accuracy",
    "kfold_split",
    "load_checkpoint",
    "load_dataset",
    "median_frequency_weights",
    "multi_task_loss",
    "open_session",
    "per_class_prf",
    "predict_online",
    "predict_sequence",
    "read_sequence",
    "receptive_field",
    "save_checkpoint",
    "subsample",
    "train_framewise",
    "train_temporal",
    "write_dataset",
    "write_sequence",
]
