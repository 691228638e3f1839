"""Deterministic simulator of Byzantine-robust federated learning with FedGreed."""
from .aggregation import (AggregatorSpec, GreedyTrace, aggregate, coordinate_median, fed_greed,
                          krum_scores, krum_select, mean_weighted, multi_krum, trimmed_mean)
from .attacks import AttackSpec, add_gaussian_noise, corrupt, flip_labels
from .config import ConfigFile, ExperimentConfig, load_config
from .data import PartitionPlan, ServerSplit, dirichlet_partition, load_idx, split_server_set, synthetic_blobs
from .engine import Experiment, RoundRecord, local_train, run_experiment
from .errors import ConfigError, FormatError, InvalidInputError, PartitionInfeasibleError
from .model import Dataset, LossOracle, OptimizerState, gradient, loss, optimizer_step, predict_accuracy

__version__ = "0.1.0"
