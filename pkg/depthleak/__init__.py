"""
depthleak - Infer neural-network depth from inference timing and rebuild a substitute.

Covers the attacker's whole pipeline: timing datasets, depth regression,
training-set reconstruction, depth-constrained architecture search, and the
dummy-layer and poisoning mitigations.
"""

__version__ = "0.1.0"

from .arch import ArchitectureSpec, depth, multiplication_count, param_count, vgg_preset
from .attack_data import (
    ArchSpace,
    TargetOracle,
    TimingDataset,
    TimingSample,
    build_timing_dataset,
    membership_test,
    poison_timing_dataset,
    reconstruct_training_set,
    sample_random_architecture,
)
from .codecs import DatasetSource, load_dataset
from .exceptions import (
    ClockUnavailableError,
    ConfigError,
    DatasetFormatError,
    NotFittedError,
    PhaseError,
    ShapeError,
)
from .network import TrainedNetwork, forward, init_network, load_network, save_network
from .timing import (
    CostModel,
    RemoteChannel,
    estimate_processing_time,
    measure_wall,
    pad_with_dummy_layers,
    remote_response_time,
    simulate_time,
)
from .training import LabeledDataset, agreement, evaluate, train_distilled, train_supervised

__all__ = [
    "ArchSpace",
    "ArchitectureSpec",
    "ClockUnavailableError",
    "ConfigError",
    "CostModel",
    "DatasetFormatError",
    "DatasetSource",
    "LabeledDataset",
    "NotFittedError",
    "PhaseError",
    "RemoteChannel",
    "ShapeError",
    "TargetOracle",
    "TimingDataset",
    "TimingSample",
    "TrainedNetwork",
    "agreement",
    "build_timing_dataset",
    "depth",
    "estimate_processing_time",
    "evaluate",
    "forward",
    "init_network",
    "load_dataset",
    "load_network",
    "measure_wall",
    "membership_test",
    "multiplication_count",
    "pad_with_dummy_layers",
    "param_count",
    "poison_timing_dataset",
    "reconstruct_training_set",
    "remote_response_time",
    "sample_random_architecture",
    "save_network",
    "simulate_time",
    "train_distilled",
    "train_supervised",
    "vgg_preset",
]
