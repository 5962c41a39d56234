"""Correlation-driven redundancy training and nuclear-norm channel pruning for small CNNs."""

from .ccm import CcmMode, ccm_loss, ccm_loss_and_grad, ccm_loss_grad, combine_objective, corr_matrix
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SynthDataset, synth_dataset
from .estimators import CCMNetClassifier, ChannelPruner
from .exceptions import (
    ArtifactError,
    CCMPruneError,
    ConfigError,
    DomainError,
    TensorFormatError,
    TrainingDivergedError,
)
from .importance import ImportanceList, average_scores, chip_scores, gini, l1_weight_scores
from .nn import NetworkParams, NetworkSpec, forward, init_params
from .selection import PruningPlan, RetainSet, build_plan, fixed_ratio_select, identity_plan, pcrr_select
from .surgery import CompressionReport, apply_plan, compression_report, count_flops, count_params, finetune
from .tensor import channel_matrix, nuclear_norm, read_tensor, singular_values, write_tensor
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ArtifactError", "CCMNetClassifier", "CCMPruneError", "CcmMode", "ChannelPruner", "CompressionReport",
    "ConfigError", "DomainError", "ImportanceList", "NetworkParams", "NetworkSpec", "PruningPlan",
    "RetainSet", "SynthDataset", "TensorFormatError", "TrainConfig", "TrainingDivergedError",
    "apply_plan", "average_scores", "build_plan", "ccm_loss", "ccm_loss_and_grad", "ccm_loss_grad",
    "channel_matrix", "chip_scores", "combine_objective", "compression_report", "corr_matrix",
    "count_flops", "count_params", "evaluate", "finetune", "fixed_ratio_select", "forward", "gini",
    "identity_plan", "init_params", "l1_weight_scores", "load_checkpoint", "nuclear_norm", "pcrr_select",
    "read_tensor", "save_checkpoint", "singular_values", "synth_dataset", "train", "write_tensor",
]
