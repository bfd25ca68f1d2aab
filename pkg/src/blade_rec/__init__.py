"""Behavior-set sequential recommender with behavior-level data augmentation,
dual item-behavior fusion encoding and a full-ranking evaluation harness."""

from .augment import AugmentConfig, augment_sequence, aux_flip, cooccur_add, freq_mask, sample_indices
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_run_config
from .data import (
    BehaviorVocab,
    DataError,
    Dataset,
    EvalExample,
    EvalView,
    Interaction,
    SyntheticConfig,
    TrainView,
    UserSequence,
    generate_synthetic,
    leave_one_out_split,
    load_dataset,
    truncate_pad,
)
from .estimator import BladeRecommender
from .losses import LossConfig, behavior_richness_weight, next_item_loss, predict_score, seq_cl_loss, total_loss
from .metrics import MetricsReport, evaluate, full_rank, hr_ndcg_at_k, tail_partition
from .model import BladeModel, EncoderConfig, parameter_groups
from .stats import BehaviorStats, compute_behavior_stats, compute_cooccurrence, compute_frequency
from .training import TrainConfig, TrainResult, apply_ablation, gradient_check, train

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "BehaviorStats",
    "BehaviorVocab",
    "BladeModel",
    "BladeRecommender",
    "ConfigError",
    "DataError",
    "Dataset",
    "EncoderConfig",
    "EvalExample",
    "EvalView",
    "Interaction",
    "LossConfig",
    "MetricsReport",
    "RunConfig",
    "SyntheticConfig",
    "TrainConfig",
    "TrainResult",
    "TrainView",
    "UserSequence",
    "apply_ablation",
    "augment_sequence",
    "aux_flip",
    "behavior_richness_weight",
    "compute_behavior_stats",
    "compute_cooccurrence",
    "compute_frequency",
    "cooccur_add",
    "evaluate",
    "freq_mask",
    "full_rank",
    "generate_synthetic",
    "gradient_check",
    "hr_ndcg_at_k",
    "leave_one_out_split",
    "load_checkpoint",
    "load_dataset",
    "load_run_config",
    "next_item_loss",
    "parameter_groups",
    "predict_score",
    "read_checkpoint",
    "sample_indices",
    "save_checkpoint",
    "seq_cl_loss",
    "tail_partition",
    "total_loss",
    "train",
    "truncate_pad",
]
