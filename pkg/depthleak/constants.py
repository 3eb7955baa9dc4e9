from typing import Literal

LayerType = Literal["conv", "maxpool", "fc", "gap", "flatten", "activation"]
Padding = Literal["same", "valid"]
ActivationKind = Literal["relu", "softmax"]
InitScheme = Literal["uniform", "identity"]

SplitTag = Literal["train", "val", "test"]
Membership = Literal["member", "non-member"]

TimingMode = Literal["wall", "cost-model"]
PoolPolicy = Literal["every-second", "strided-conv", "none"]
PoisonStrategy = Literal["label-flip", "time-shift"]
DatasetKind = Literal["synthetic-blobs", "cifar10-binary", "idx"]

RegressorKind = Literal["ridge", "linear-svr", "decision-tree", "random-forest", "boosted-trees"]
FeatureSet = Literal["time-only", "time+params"]

Baseline = Literal["none", "ema"]
DefenseMode = Literal["dummy-layers", "poison"]

# Layers whose execution is sequential and therefore visible in total time
COUNTED_LAYERS = ("conv", "maxpool", "fc")

TIMING_CSV_HEADER = ("arch_id", "depth", "n_params", "mean_time_s", "n_runs", "hardware_tag")
SEARCH_LOG_HEADER = ("candidate_idx", "arch_json", "val_acc", "reward", "cumulative_best")
RANKING_CSV_HEADER = ("rank", "kind", "feature_set", "mse", "r2", "n_seeds")

CIFAR10_RECORD_BYTES = 3073
CIFAR10_SHAPE = (32, 32, 3)
IDX_UBYTE = 0x08

DEFAULT_N_RUNS = 20
DEFAULT_MEMBERSHIP_THRESHOLD = 0.9
