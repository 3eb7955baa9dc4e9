import hashlib
import json
import logging
import math
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from .arch import ArchitectureSpec, comparison_count, depth, multiplication_count
from .base import Layer, Shape
from .exceptions import ClockUnavailableError
from .layers import Conv2D, MaxPool
from .network import TrainedNetwork, forward
from .validation import ArchValidator, TimingValidator

logger = logging.getLogger(__name__)

# Required resolution of the process CPU clock, in seconds
CLOCK_RESOLUTION = 1e-6

# At most one wall-clock measurement runs at a time, process-wide
_MEASUREMENT_LEASE = threading.Lock()


@dataclass(frozen=True)
class CostModel:
    """
    Deterministic surrogate for hardware inference time.

    The defaults describe a parallel device whose per-layer dispatch
    overhead dominates, so time grows with depth and the arithmetic only
    spreads architectures of equal depth.

    t = (alpha * multiplications + gamma * comparisons + beta * depth) * exp(noise_sigma * z)
    with z drawn from a stream seeded by (seed, draw).

    Attributes:
        alpha: Seconds per multiplication
        beta: Seconds of fixed overhead per counted layer
        gamma: Seconds per pooling comparison
        noise_sigma: Spread of the multiplicative log-normal noise, 0 for none
        seed: Seed of the noise stream
    """
    alpha: float = 1e-12
    beta: float = 1e-3
    gamma: float = 1e-12
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "noise_sigma"):
            TimingValidator.validate_non_negative(name, getattr(self, name))

    @property
    def model_id(self) -> str:
        """Stable identifier used as the hardware tag of cost-model samples."""
        digest = hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()
        return f"cost-model:{digest[:12]}"


@dataclass(frozen=True)
class RemoteChannel:
    """
    Round-trip model t_res = a * t_proc + t_net + jitter.

    Attributes:
        a: Scale applied to the processing time
        t_net_mean: Network propagation time in seconds
        jitter_sigma: Standard deviation of Gaussian jitter in seconds
        seed: Seed of the jitter stream
    """
    a: float = 1.0
    t_net_mean: float = 0.0
    jitter_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        TimingValidator.validate_positive("a", self.a)
        TimingValidator.validate_non_negative("t_net_mean", self.t_net_mean)
        TimingValidator.validate_non_negative("jitter_sigma", self.jitter_sigma)


@dataclass(frozen=True)
class WallMeasurement:
    mean_s: float
    samples: tuple[float, ...]
    output: np.ndarray | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class ProcessingTimeEstimate:
    t_proc: float
    std_error: float
    n_samples: int


@dataclass(frozen=True)
class SweepPoint:
    kind: str
    filters: int
    kernel: int
    stride: int
    time_s: float


def check_clock():
    """
    Ensure the process CPU-time counter can resolve a single inference.

    Raises:
        ClockUnavailableError: If the clock is missing or too coarse
    """
    try:
        info = time.get_clock_info("process_time")
    except (ValueError, OSError) as e:
        raise ClockUnavailableError(f"process CPU clock is unavailable: {e}") from None

    if info.resolution > CLOCK_RESOLUTION:
        raise ClockUnavailableError(
            f"process CPU clock resolution is {info.resolution:g}s; "
            f"wall-mode timing needs {CLOCK_RESOLUTION:g}s or better. Use --timing-mode cost-model."
        )


def measure_wall(net: TrainedNetwork, x: np.ndarray, n_runs: int, warm_up: bool = True) -> WallMeasurement:
    """
    Time forward passes with the process CPU clock.

    Measurements are serialized process-wide, so concurrent callers never
    overlap with each other's timed region.

    Args:
        net: Network to time
        x: A single input of shape net.arch.input_shape
        n_runs: Number of timed inferences
        warm_up: Run one untimed inference first

    Returns:
        Mean duration in seconds, the per-run samples and the posterior of the
        last timed inference. The network runs n_runs times, plus one without
        warm_up=False.
    """
    ArchValidator.validate_count("n_runs", n_runs)
    check_clock()

    samples = []
    with _MEASUREMENT_LEASE:
        if warm_up:
            forward(net, x)
        for _ in range(n_runs):
            start = time.process_time_ns()
            output = forward(net, x)
            samples.append((time.process_time_ns() - start) * 1e-9)

    return WallMeasurement(mean_s=float(np.mean(samples)), samples=tuple(samples), output=output)


def _noise(seed: int, draw: int, sigma: float) -> float:
    if sigma == 0:
        return 1.0
    z = np.random.default_rng([seed, draw]).standard_normal()
    return math.exp(sigma * z)


def simulate_time(arch: ArchitectureSpec, model: CostModel, draw: int = 0) -> float:
    """
    Cost-model inference time of an architecture.

    Args:
        arch: Architecture to time
        model: Cost coefficients and noise
        draw: Index into the seeded noise stream; the same draw always gives the same time

    Returns:
        Simulated time in seconds
    """
    base = (
        model.alpha * multiplication_count(arch)
        + model.gamma * comparison_count(arch)
        + model.beta * depth(arch)
    )
    return base * _noise(model.seed, draw, model.noise_sigma)


def layer_time(layer: Layer, in_shape: Shape, model: CostModel, draw: int = 0) -> float:
    """Cost-model time of a single layer, including one layer of fixed overhead."""
    base = (
        model.alpha * layer.multiplications(in_shape)
        + model.gamma * layer.comparisons(in_shape)
        + model.beta
    )
    return base * _noise(model.seed, draw, model.noise_sigma)


def layer_sweep(
    kind: str,
    in_shape: Shape,
    filters: Iterable[int],
    model: CostModel,
    kernels: Iterable[int] = (3, 5),
    strides: Iterable[int] = (1,),
) -> list[SweepPoint]:
    """
    Time single conv or maxpool layers across filter counts, kernels and strides.

    For conv the filter count is the number of output channels; for maxpool it
    is the channel count of the pooled feature map.

    Args:
        kind: "conv" or "maxpool"
        in_shape: Spatial input (height, width, channels); channels is replaced for maxpool
        filters: Filter counts to sweep
        model: Cost model
        kernels: Kernel sizes to sweep
        strides: Strides to sweep

    Returns:
        One SweepPoint per combination
    """
    if kind not in ("conv", "maxpool"):
        raise ValueError(f"Invalid sweep kind: {kind}. Valid kinds are: ('conv', 'maxpool')")

    points = []
    for stride in strides:
        for kernel in kernels:
            for n_filters in filters:
                if kind == "conv":
                    layer, shape = Conv2D(n_filters, kernel, stride), tuple(in_shape)
                else:
                    layer, shape = MaxPool(kernel, stride), (in_shape[0], in_shape[1], n_filters)
                points.append(SweepPoint(kind, n_filters, kernel, stride, layer_time(layer, shape, model)))
    return points


def cross_dataset_timing(
    build: Callable[[Shape], ArchitectureSpec],
    input_shapes: dict[str, Shape],
    model: CostModel,
) -> dict[str, float]:
    """
    Time one architecture family on differently shaped datasets.

    Args:
        build: Maps an input shape to the architecture instance for that dataset
        input_shapes: Dataset name to (height, width, channels), e.g. MNIST vs CIFAR-10
        model: Cost model

    Returns:
        Dataset name to simulated time
    """
    return {name: simulate_time(build(shape), model) for name, shape in input_shapes.items()}


def remote_response_time(t_proc: float, ch: RemoteChannel, draw: int = 0) -> float:
    """
    Response time seen by a remote client.

    Args:
        t_proc: Server-side processing time in seconds
        ch: Channel model
        draw: Index into the seeded jitter stream

    Returns:
        a * t_proc + t_net_mean + jitter, clamped at 0
    """
    TimingValidator.validate_non_negative("t_proc", t_proc)
    jitter = 0.0
    if ch.jitter_sigma > 0:
        jitter = np.random.default_rng([ch.seed, draw]).normal(0.0, ch.jitter_sigma)
    return max(ch.a * t_proc + ch.t_net_mean + jitter, 0.0)


def sample_response_times(t_proc: float, ch: RemoteChannel, n: int, start: int = 0) -> np.ndarray:
    """Draw n response times for the same processing time (draws start .. start+n-1)."""
    ArchValidator.validate_count("n", n)
    return np.array([remote_response_time(t_proc, ch, draw) for draw in range(start, start + n)])


def estimate_processing_time(t_res_samples: Iterable[float], ch: RemoteChannel) -> ProcessingTimeEstimate:
    """
    Invert the round-trip model from observed response times.

    Args:
        t_res_samples: Observed response times in seconds
        ch: Channel with known scale a and network time t_net_mean

    Returns:
        (mean(samples) - t_net_mean) / a with standard error jitter_sigma / (a * sqrt(N))
    """
    samples = np.asarray(list(t_res_samples), dtype=np.float64)
    if samples.size == 0:
        raise ValueError("At least one response time sample is required")

    return ProcessingTimeEstimate(
        t_proc=float((samples.mean() - ch.t_net_mean) / ch.a),
        std_error=float(ch.jitter_sigma / (ch.a * math.sqrt(samples.size))),
        n_samples=int(samples.size),
    )


def _pad_position(arch: ArchitectureSpec) -> int:
    """Index just past the last layer that still produces a spatial map."""
    return max(index for index, shape in enumerate(arch.shapes) if len(shape) == 3)


def _pad_kernel(arch: ArchitectureSpec, position: int) -> int:
    """Kernel of the last conv ahead of position, 1 when there is none."""
    convs = [layer for layer in arch.layers[:position] if isinstance(layer, Conv2D)]
    return convs[-1].kernel if convs else 1


def pad_with_dummy_layers(arch: ArchitectureSpec, k: int, kernel: int | None = None) -> ArchitectureSpec:
    """
    Add k identity convolutions that cost time but leave posteriors unchanged.

    The pads are inserted after the last spatial layer, ahead of the
    classifier head, and raise depth by k. Each pad keeps the channel count
    of its input and by default reuses the kernel of the preceding conv, so
    it is timed like one more layer of the same network; kernel=1 gives
    pointwise pads. Only the centre tap of an identity kernel is non-zero.
    """
    ArchValidator.validate_count("k", k, minimum=0)
    if k == 0:
        return arch

    position = _pad_position(arch)
    channels = arch.shapes[position][2]
    if kernel is None:
        kernel = _pad_kernel(arch, position)
    ArchValidator.validate_count("kernel", kernel)
    pads = tuple(Conv2D(channels, kernel, 1, "same", init="identity") for _ in range(k))
    layers = arch.layers[:position] + pads + arch.layers[position:]
    return ArchitectureSpec(input_shape=arch.input_shape, layers=layers, num_classes=arch.num_classes)


def pad_network(net: TrainedNetwork, k: int, kernel: int | None = None) -> TrainedNetwork:
    """Apply pad_with_dummy_layers to a trained network, keeping its trained weights."""
    padded = pad_with_dummy_layers(net.arch, k, kernel)
    if k == 0:
        return net

    position = _pad_position(net.arch)
    in_shape = net.arch.shapes[position]
    pads = tuple(pad.init_params(in_shape, None) for pad in padded.layers[position:position + k])
    parameters = net.parameters[:position] + pads + net.parameters[position:]

    logger.info("Padded network with %d dummy layers (depth %d -> %d)", k, depth(net.arch), depth(padded))
    return TrainedNetwork(arch=padded, parameters=parameters, rng_seed=net.rng_seed)
