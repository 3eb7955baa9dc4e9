import logging
import platform
from dataclasses import dataclass, replace

import numpy as np
from tqdm import tqdm

from .arch import ArchitectureSpec, depth, param_count, with_classifier
from .base import Layer, Shape
from .constants import DEFAULT_N_RUNS, Membership, PoisonStrategy, PoolPolicy, TimingMode
from .exceptions import ClockUnavailableError
from .layers import Activation, Conv2D, MaxPool
from .network import TrainedNetwork, init_network
from .timing import CostModel, measure_wall, simulate_time
from .training import LabeledDataset
from .validation import ArchValidator, DatasetValidator

logger = logging.getLogger(__name__)

# Draw offset for attack-time queries, keeping them apart from dataset draws
QUERY_DRAW_OFFSET = 1_000_000


@dataclass(frozen=True)
class TimingSample:
    """One (time, depth) observation of the attacker dataset."""
    arch_id: str
    depth: int
    n_params: int
    mean_time_s: float
    n_runs: int
    hardware_tag: str

    def __post_init__(self):
        ArchValidator.validate_count("depth", self.depth)
        if not self.mean_time_s > 0:
            raise ValueError(f"mean_time_s must be > 0, got {self.mean_time_s}")


@dataclass(frozen=True)
class TimingDataset:
    """
    The attacker dataset of timing samples collected on one hardware target.

    Attributes:
        samples: Timing observations
        mode: "wall" for measured times, "cost-model" for simulated ones
        cost_model_id: Identifier of the cost model for simulated datasets
        n_requested: Number of architectures the build asked for
    """
    samples: tuple[TimingSample, ...]
    mode: TimingMode = "cost-model"
    cost_model_id: str | None = None
    n_requested: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        tags = {s.hardware_tag for s in self.samples}
        if len(tags) > 1:
            raise ValueError(f"Timing samples mix hardware tags: {sorted(tags)}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def is_partial(self) -> bool:
        return self.n_requested is not None and len(self.samples) < self.n_requested

    @property
    def depths(self) -> np.ndarray:
        return np.array([s.depth for s in self.samples], dtype=np.float64)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.mean_time_s for s in self.samples], dtype=np.float64)

    @property
    def params(self) -> np.ndarray:
        return np.array([s.n_params for s in self.samples], dtype=np.float64)

    def take(self, indices: np.ndarray) -> "TimingDataset":
        return replace(self, samples=tuple(self.samples[i] for i in indices), n_requested=None)


@dataclass(frozen=True)
class ArchSpace:
    """
    Family of VGG-like architectures the attacker times.

    Attributes:
        depth_range: Inclusive (min, max) counted depth, classifier excluded
        kernel_choices: Square kernel sizes drawn per conv layer
        filter_choices: Filter counts drawn per conv layer
        pool_policy: "every-second" inserts a 2x2 max pool after every second conv
            while the map is larger than 4; "strided-conv" makes that conv stride 2
            instead; "none" keeps full resolution
        input_shape: (height, width, channels)
        num_classes: Classifier width
    """
    depth_range: tuple[int, int] = (5, 15)
    kernel_choices: tuple[int, ...] = (3, 5)
    filter_choices: tuple[int, ...] = (32, 64, 128)
    pool_policy: PoolPolicy = "every-second"
    input_shape: Shape = (32, 32, 3)
    num_classes: int = 10

    def __post_init__(self):
        low, high = self.depth_range
        ArchValidator.validate_count("depth_range min", low)
        if high < low:
            raise ValueError(f"depth_range max {high} is below min {low}")
        if not self.kernel_choices or not self.filter_choices:
            raise ValueError("kernel_choices and filter_choices must be non-empty")
        for k in self.kernel_choices:
            ArchValidator.validate_count("kernel", k)
        for f in self.filter_choices:
            ArchValidator.validate_count("filters", f)
        ArchValidator.validate_choice("pool_policy", self.pool_policy, PoolPolicy)
        ArchValidator.validate_shape(self.input_shape)
        object.__setattr__(self, "kernel_choices", tuple(sorted(self.kernel_choices)))
        object.__setattr__(self, "filter_choices", tuple(sorted(self.filter_choices)))


def sample_random_architecture(space: ArchSpace, seed: int) -> ArchitectureSpec:
    """
    Draw an architecture from the space.

    Depth is uniform over depth_range and each conv draws its kernel and
    filter count uniformly. Downsampling follows the pool policy, and the
    result always ends with Flatten and a dense classifier.
    """
    rng = np.random.default_rng(seed)
    target_depth = int(rng.integers(space.depth_range[0], space.depth_range[1] + 1))

    layers: list[Layer] = []
    shape = tuple(space.input_shape)
    since_pool = 0
    for _ in range(target_depth):
        kernel = int(rng.choice(space.kernel_choices))
        filters = int(rng.choice(space.filter_choices))
        due = space.pool_policy != "none" and since_pool == 2 and min(shape[:2]) > 4

        if due and space.pool_policy == "every-second":
            layer: Layer = MaxPool(2, 2)
            layers.append(layer)
        else:
            layer = Conv2D(filters, kernel, 2 if due else 1, "same")
            layers += [layer, Activation("relu")]

        shape = layer.output_shape(shape)
        since_pool = 0 if due else since_pool + 1

    return with_classifier(space.input_shape, layers, space.num_classes)


def _time_one(
    arch: ArchitectureSpec,
    index: int,
    mode: TimingMode,
    cost_model: CostModel | None,
    n_runs: int,
    seed: int,
) -> float:
    if mode == "cost-model":
        return float(np.mean([simulate_time(arch, cost_model, draw=index * n_runs + run) for run in range(n_runs)]))

    net = init_network(arch, seed)
    x = np.random.default_rng([seed, 2]).uniform(size=arch.input_shape)
    return measure_wall(net, x, n_runs).mean_s


def build_timing_dataset(
    space: ArchSpace,
    n_archs: int,
    mode: TimingMode = "cost-model",
    cost_model: CostModel | None = None,
    n_runs: int = DEFAULT_N_RUNS,
    seed: int = 0,
    hardware_tag: str | None = None,
    progress: bool = False,
) -> tuple[TimingDataset, list[ArchitectureSpec]]:
    """
    Time n_archs random architectures to build the attacker dataset.

    Args:
        space: Architecture family
        n_archs: Number of architectures to sample
        mode: "cost-model" (reproducible) or "wall" (process CPU clock)
        cost_model: Required in cost-model mode
        n_runs: Inferences averaged per architecture
        seed: Seed for architecture sampling and network initialisation
        hardware_tag: Tag for wall-mode rows; defaults to the host processor
        progress: Show a progress bar

    Returns:
        The dataset and the architectures that were timed, in row order.
        Architectures whose timing fails are skipped with a warning and the
        dataset is marked partial.
    """
    ArchValidator.validate_count("n_archs", n_archs)
    ArchValidator.validate_count("n_runs", n_runs)
    if mode == "cost-model":
        if cost_model is None:
            raise ValueError("cost-model mode needs a CostModel")
        tag = cost_model.model_id
    else:
        tag = hardware_tag or platform.processor() or platform.machine() or "unknown"

    samples, archs = [], []
    for index in tqdm(range(n_archs), desc="timing architectures", disable=not progress):
        arch = sample_random_architecture(space, seed=int(np.random.default_rng([seed, index]).integers(2**31)))
        try:
            mean_time = _time_one(arch, index, mode, cost_model, n_runs, seed + index)
        except ClockUnavailableError:
            raise
        except Exception as e:
            logger.warning("Skipping architecture %d: timing failed (%s)", index, e)
            continue

        samples.append(TimingSample(
            arch_id=f"arch-{index:04d}",
            depth=depth(arch),
            n_params=param_count(arch),
            mean_time_s=mean_time,
            n_runs=n_runs,
            hardware_tag=tag,
        ))
        archs.append(arch)

    dataset = TimingDataset(
        samples=tuple(samples),
        mode=mode,
        cost_model_id=tag if mode == "cost-model" else None,
        n_requested=n_archs,
    )
    if dataset.is_partial:
        logger.warning("Timing dataset is partial: %d of %d architectures timed", len(samples), n_archs)
    return dataset, archs


def depth_time_correlation(ds: TimingDataset) -> float:
    """Pearson correlation between depth and mean time."""
    if len(ds) < 2:
        raise ValueError("Correlation needs at least two samples")
    return float(np.corrcoef(ds.depths, ds.times)[0, 1])


def poison_timing_dataset(
    ds: TimingDataset,
    fraction: float,
    strategy: PoisonStrategy = "label-flip",
    seed: int = 0,
) -> TimingDataset:
    """
    Replace a fraction of samples with adversarial (time, depth) pairs.

    Args:
        ds: Clean dataset; never modified
        fraction: Share of samples to poison; floor(fraction * N) are chosen
        strategy: "label-flip" draws a wrong depth uniformly from the observed
            depth range; "time-shift" scales the time by a log-uniform factor in [1/4, 4]
        seed: Seed for sample selection and poison values

    Returns:
        A new dataset of the same length
    """
    DatasetValidator.validate_fraction("fraction", fraction)
    ArchValidator.validate_choice("poison strategy", strategy, PoisonStrategy)

    n_poison = int(np.floor(fraction * len(ds)))
    if n_poison == 0:
        return replace(ds)

    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(ds), size=n_poison, replace=False)
    samples = list(ds.samples)
    low, high = int(ds.depths.min()), int(ds.depths.max())

    for index in sorted(chosen):
        sample = samples[index]
        if strategy == "label-flip":
            wrong = [d for d in range(low, high + 1) if d != sample.depth] or [sample.depth + 1]
            samples[index] = replace(sample, depth=int(rng.choice(wrong)))
        else:
            factor = float(np.exp(rng.uniform(np.log(0.25), np.log(4.0))))
            samples[index] = replace(sample, mean_time_s=sample.mean_time_s * factor)

    logger.info("Poisoned %d of %d timing samples (%s)", n_poison, len(ds), strategy)
    return replace(ds, samples=tuple(samples))


def membership_test(posterior: np.ndarray, threshold: float) -> Membership:
    """Declare membership when the maximum posterior exceeds the threshold."""
    DatasetValidator.validate_posterior(posterior)
    DatasetValidator.validate_fraction("threshold", threshold, open_low=True, open_high=True)
    return "member" if float(np.max(posterior)) > threshold else "non-member"


def membership_mask(target: TrainedNetwork, candidate_pool: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Apply the membership rule to a whole pool.

    Returns:
        Boolean mask of members and the target posteriors of every candidate
    """
    DatasetValidator.validate_fraction("threshold", threshold, open_low=True, open_high=True)
    posteriors = target.predict_proba(candidate_pool)
    return posteriors.max(axis=1) > threshold, posteriors


def reconstruct_training_set(
    target: TrainedNetwork,
    candidate_pool: np.ndarray,
    threshold: float,
) -> LabeledDataset:
    """
    Rebuild a distillation set from the target's confident predictions.

    Args:
        target: The black-box target
        candidate_pool: Inputs drawn from the known data distribution
        threshold: Membership threshold on the maximum posterior

    Returns:
        Candidates judged members, each labeled with the full target posterior.
        An empty result is returned with a warning.
    """
    candidate_pool = np.asarray(candidate_pool, dtype=np.float64)
    if len(candidate_pool) == 0:
        raise ValueError("Candidate pool must not be empty")

    mask, posteriors = membership_mask(target, candidate_pool, threshold)
    if not mask.any():
        logger.warning("No candidate exceeded membership threshold %.3f", threshold)
    else:
        logger.info("Reconstructed %d of %d candidates as members", int(mask.sum()), len(mask))
    return LabeledDataset(candidate_pool[mask], posteriors[mask])


@dataclass(frozen=True)
class ThresholdPoint:
    threshold: float
    precision: float
    recall: float
    n_selected: int


def calibrate_threshold(
    target: TrainedNetwork,
    members: np.ndarray,
    non_members: np.ndarray,
    thresholds: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99),
) -> list[ThresholdPoint]:
    """Sweep membership thresholds against known members and non-members."""
    points = []
    for threshold in thresholds:
        hit_members, _ = membership_mask(target, members, threshold)
        hit_others, _ = membership_mask(target, non_members, threshold)
        selected = int(hit_members.sum() + hit_others.sum())
        points.append(ThresholdPoint(
            threshold=threshold,
            precision=float(hit_members.sum() / selected) if selected else 0.0,
            recall=float(hit_members.mean()) if len(members) else 0.0,
            n_selected=selected,
        ))
    return points


class TargetOracle:
    """
    Black-box access to a deployed target.

    Every query runs one inference and is counted; the observed time comes
    from the process clock in wall mode or from the cost model otherwise.
    """

    def __init__(self, net: TrainedNetwork, mode: TimingMode = "cost-model", cost_model: CostModel | None = None):
        if mode == "cost-model" and cost_model is None:
            raise ValueError("cost-model mode needs a CostModel")
        self._net = net
        self.mode = mode
        self.cost_model = cost_model
        self.query_count = 0

    @property
    def num_classes(self) -> int:
        return self._net.arch.num_classes

    def query(self, x: np.ndarray) -> tuple[np.ndarray, float]:
        """Run one inference, returning the posterior and its observed time."""
        if self.mode == "cost-model":
            posterior = self._net.predict_proba(np.asarray(x)[None])[0]
            elapsed = simulate_time(self._net.arch, self.cost_model, draw=QUERY_DRAW_OFFSET + self.query_count)
        else:
            measurement = measure_wall(self._net, x, 1, warm_up=False)
            posterior, elapsed = measurement.output, measurement.mean_s
        self.query_count += 1
        return posterior, elapsed

    def mean_query_time(self, x: np.ndarray, n_runs: int = DEFAULT_N_RUNS) -> float:
        """Average observed time over a constant number of queries."""
        ArchValidator.validate_count("n_runs", n_runs)
        return float(np.mean([self.query(x)[1] for _ in range(n_runs)]))
