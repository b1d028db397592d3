"""CISIR: correlation-regularized, importance-weighted, stratified-mini-batch
training for highly imbalanced tabular regression."""

from .data import (
    DatasetDescriptor,
    DatasetTable,
    SplitPlan,
    load_csv,
    rare_mask,
    save_csv,
    stratified_split,
)
from .density import (
    BandwidthSolution,
    DensityProfile,
    build_profile,
    density_imbalance_ratio,
    frequency_imbalance_ratio,
    kde_density,
    normalize_densities,
    solve_bandwidth,
)
from .evaluation import EvalReport, aggregate, evaluate, significant_difference
from .importance import ImportanceSpec, ImportanceVector, compute_importances, mdi, recip
from .loss import (
    LossBreakdown,
    LossConfig,
    combined_loss,
    loss_gradient,
    mse_decomposition,
    wmse,
    wpcc_loss,
)
from .network import ArchitectureConfig, ModelState, OptimizerConfig, forward, init_model
from .sampler import GroupPlan, build_groups, epoch_batches, uniform_epoch_batches
from .synth import SyntheticSpec, descriptor_for, generate
from .trainer import TrainConfig, TrainHistory, TrainingDiverged, sweep, train_cv, train_one

__version__ = "0.1.0"

__all__ = [
    "ArchitectureConfig", "BandwidthSolution", "DatasetDescriptor", "DatasetTable",
    "DensityProfile", "EvalReport", "GroupPlan", "ImportanceSpec", "ImportanceVector",
    "LossBreakdown", "LossConfig", "ModelState", "OptimizerConfig", "SplitPlan",
    "SyntheticSpec", "TrainConfig", "TrainHistory", "TrainingDiverged",
    "aggregate", "build_groups", "build_profile", "combined_loss", "compute_importances",
    "density_imbalance_ratio", "descriptor_for", "epoch_batches", "evaluate",
    "forward", "frequency_imbalance_ratio", "generate", "init_model", "kde_density",
    "load_csv", "loss_gradient", "mdi", "mse_decomposition", "normalize_densities",
    "rare_mask", "recip", "save_csv", "significant_difference", "solve_bandwidth",
    "stratified_split", "sweep", "train_cv", "train_one", "uniform_epoch_batches",
    "wmse", "wpcc_loss",
]
