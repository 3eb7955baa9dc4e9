import types

import pytest
import numpy as np
from scipy.stats import pearsonr

from depthleak import timing
from depthleak.arch import ArchitectureSpec, conv_relu, depth, vgg_preset, with_classifier
from depthleak.attack_data import ArchSpace, sample_random_architecture
from depthleak.exceptions import ClockUnavailableError
from depthleak.layers import Conv2D, GlobalAvgPool, MaxPool
from depthleak.network import forward, init_network
from depthleak.timing import (
    CostModel,
    RemoteChannel,
    cross_dataset_timing,
    estimate_processing_time,
    layer_sweep,
    measure_wall,
    pad_network,
    pad_with_dummy_layers,
    remote_response_time,
    sample_response_times,
    simulate_time,
)
from depthleak.training import LabeledDataset


@pytest.fixture
def million_mult_arch() -> ArchitectureSpec:
    """One 1x1 conv with 10^6 multiplications and two counted 1x1 pools: depth 3."""
    return ArchitectureSpec((10, 10, 100), (Conv2D(100, 1), MaxPool(1, 1), MaxPool(1, 1), GlobalAvgPool()), 100)


class TestCostModel:
    """Test the deterministic timing surrogate."""

    def test_formula(self, million_mult_arch: ArchitectureSpec):
        """Test alpha * mults + beta * depth with no noise."""
        model = CostModel(alpha=1e-9, beta=1e-5, gamma=0.0, noise_sigma=0.0)

        assert depth(million_mult_arch) == 3
        assert simulate_time(million_mult_arch, model) == pytest.approx(1.03e-3, rel=1e-12)

    def test_comparisons_cost_gamma(self, million_mult_arch: ArchitectureSpec):
        """Test that pooling comparisons are priced separately."""
        base = simulate_time(million_mult_arch, CostModel(gamma=0.0))
        priced = simulate_time(million_mult_arch, CostModel(gamma=1e-9))

        assert priced - base == pytest.approx(1e-9 * 2 * 10 * 10 * 100, rel=1e-9)

    def test_noise_is_seeded_by_draw(self, conv_arch: ArchitectureSpec):
        """Test that a draw index always maps to the same noisy time."""
        model = CostModel(noise_sigma=0.1, seed=3)

        assert simulate_time(conv_arch, model, draw=7) == simulate_time(conv_arch, model, draw=7)
        assert simulate_time(conv_arch, model, draw=7) != simulate_time(conv_arch, model, draw=8)

    def test_model_id(self):
        """Test that the identifier is stable and tracks every coefficient."""
        assert CostModel().model_id == CostModel().model_id
        assert CostModel().model_id.startswith("cost-model:")
        assert CostModel(alpha=2e-9).model_id != CostModel().model_id
        assert CostModel(seed=1).model_id != CostModel().model_id

    @pytest.mark.parametrize("kwargs", [{"alpha": -1.0}, {"noise_sigma": float("nan")}, {"beta": "1e-5"}])
    def test_invalid_coefficients(self, kwargs: dict):
        """Test coefficient validation."""
        with pytest.raises((TypeError, ValueError)):
            CostModel(**kwargs)

    def test_depth_linearity(self):
        """Test that depth and time correlate strongly for fixed per-layer size under 5% noise."""
        space = ArchSpace(
            depth_range=(5, 24), kernel_choices=(3,), filter_choices=(8,), pool_policy="none",
            input_shape=(8, 8, 8), num_classes=4,
        )
        for seed in range(10):
            model = CostModel(noise_sigma=0.05, seed=seed)
            archs = [sample_random_architecture(space, seed * 100 + i) for i in range(40)]
            times = [simulate_time(arch, model, draw=i) for i, arch in enumerate(archs)]

            r, _ = pearsonr([depth(arch) for arch in archs], times)
            assert r >= 0.95


class TestSweeps:
    """Test single-layer and cross-dataset timing."""

    def test_conv_time_grows_with_filters(self):
        """Test that conv time increases with filter count for each kernel."""
        points = layer_sweep("conv", (32, 32, 3), (32, 64, 128), CostModel())

        for kernel in (3, 5):
            times = [p.time_s for p in points if p.kernel == kernel]
            assert times == sorted(times)
            assert len(set(times)) == 3

    def test_maxpool_time_shrinks_with_stride(self):
        """Test that a larger pooling stride means fewer comparisons."""
        points = layer_sweep("maxpool", (32, 32, 3), (64,), CostModel(gamma=1e-9), kernels=(2,), strides=(1, 2, 4))

        times = [p.time_s for p in points]
        assert times[0] > times[1] > times[2]

    def test_unknown_sweep_kind(self):
        """Test that only conv and maxpool sweeps exist."""
        with pytest.raises(ValueError):
            layer_sweep("fc", (8, 8, 3), (8,), CostModel())

    def test_cross_dataset(self):
        """Test that the same family is slower on larger inputs."""
        times = cross_dataset_timing(
            lambda shape: vgg_preset(1, input_shape=shape),
            {"mnist": (28, 28, 1), "cifar10": (32, 32, 3)},
            CostModel(),
        )

        assert times["cifar10"] > times["mnist"] > 0


class TestRemoteChannel:
    """Test the round-trip response model and its inversion."""

    @pytest.mark.parametrize("a, t_proc, t_net, expected", [
        (1.0, 0.5, 0.1, 0.6),
        (2.0, 0.5, 0.0, 1.0),
    ])
    def test_response_time(self, a: float, t_proc: float, t_net: float, expected: float):
        """Test a * t_proc + t_net without jitter."""
        assert remote_response_time(t_proc, RemoteChannel(a=a, t_net_mean=t_net)) == pytest.approx(expected)

    def test_jitter_mean(self):
        """Test that 1000 jittered responses average within 3 sigma / sqrt(N)."""
        ch = RemoteChannel(a=1.0, t_net_mean=0.1, jitter_sigma=0.01, seed=4)
        samples = sample_response_times(0.5, ch, 1000)

        assert abs(samples.mean() - 0.6) <= 3 * 0.01 / np.sqrt(1000)

    @pytest.mark.parametrize("samples, a, t_net, expected", [
        ([0.6] * 5, 1.0, 0.1, 0.5),
        ([1.0] * 3, 2.0, 0.0, 0.5),
    ])
    def test_exact_inversion(self, samples: list, a: float, t_net: float, expected: float):
        """Test the estimator without jitter."""
        estimate = estimate_processing_time(samples, RemoteChannel(a=a, t_net_mean=t_net))

        assert estimate.t_proc == pytest.approx(expected)
        assert estimate.std_error == 0.0
        assert estimate.n_samples == len(samples)

    def test_estimator_coverage(self):
        """Test that the estimate lands within 3 standard errors in at least 95% of 200 trials."""
        hits = 0
        for trial in range(200):
            ch = RemoteChannel(a=1.5, t_net_mean=0.05, jitter_sigma=0.01, seed=trial)
            estimate = estimate_processing_time(sample_response_times(0.5, ch, 1000), ch)
            hits += abs(estimate.t_proc - 0.5) <= 3 * estimate.std_error

        assert hits >= 190

    def test_empty_samples(self):
        """Test that at least one response is required."""
        with pytest.raises(ValueError):
            estimate_processing_time([], RemoteChannel())

    def test_scale_must_be_positive(self):
        """Test channel validation."""
        with pytest.raises(ValueError):
            RemoteChannel(a=0.0)


class TestWallClock:
    """Test process-clock measurement."""

    @pytest.mark.parametrize("n_runs", [1, 20])
    def test_sample_count(self, conv_arch: ArchitectureSpec, n_runs: int):
        """Test that n_runs samples are taken and averaged."""
        net = init_network(conv_arch, 0)
        measurement = measure_wall(net, np.zeros(conv_arch.input_shape), n_runs)

        assert len(measurement.samples) == n_runs
        assert measurement.mean_s == pytest.approx(np.mean(measurement.samples))
        assert all(s >= 0 for s in measurement.samples)

    def test_coarse_clock_is_rejected(self, conv_arch: ArchitectureSpec, monkeypatch: pytest.MonkeyPatch):
        """Test that a clock coarser than a microsecond raises a capability error."""
        coarse = types.SimpleNamespace(resolution=0.01)
        monkeypatch.setattr(timing.time, "get_clock_info", lambda name: coarse)

        with pytest.raises(ClockUnavailableError, match="cost-model"):
            measure_wall(init_network(conv_arch, 0), np.zeros(conv_arch.input_shape), 1)


class TestDummyLayers:
    """Test the dummy-layer mitigation."""

    def test_zero_pads(self, conv_arch: ArchitectureSpec):
        """Test that k = 0 changes nothing."""
        assert pad_with_dummy_layers(conv_arch, 0) is conv_arch

    @pytest.mark.parametrize("k", [1, 2, 5])
    def test_depth_increases_by_k(self, conv_arch: ArchitectureSpec, k: int):
        """Test that each pad is one counted layer placed before the classifier head."""
        padded = pad_with_dummy_layers(conv_arch, k)

        assert depth(padded) == depth(conv_arch) + k
        assert padded.shapes[-1] == conv_arch.shapes[-1]

    @pytest.mark.parametrize("kernel", [1, 3, 5])
    def test_pads_copy_the_last_conv(self, kernel: int):
        """Test that pads reuse the kernel and channel count of the conv before them."""
        arch = with_classifier((8, 8, 3), conv_relu(6, kernel) + [MaxPool(2, 2)], 4)
        pads = [layer for layer in pad_with_dummy_layers(arch, 3).layers if getattr(layer, "init", None) == "identity"]

        assert len(pads) == 3
        assert all(pad.kernel == kernel and pad.out_channels == 6 and pad.stride == 1 for pad in pads)

    def test_pointwise_pads(self, conv_arch: ArchitectureSpec):
        """Test that an explicit kernel overrides the copied one."""
        padded = pad_with_dummy_layers(conv_arch, 2, kernel=1)

        assert [layer.kernel for layer in padded.layers if getattr(layer, "init", None) == "identity"] == [1, 1]

    def test_time_increase(self, conv_arch: ArchitectureSpec):
        """Test that two pads add exactly 2 beta when multiplications are free, plus their 3x3 convs otherwise."""
        free = CostModel(alpha=0.0, gamma=0.0)
        padded = pad_with_dummy_layers(conv_arch, 2)

        assert simulate_time(padded, free) - simulate_time(conv_arch, free) == pytest.approx(2 * free.beta)

        priced = CostModel(alpha=1e-9, beta=1e-5)
        extra = 2 * priced.alpha * 4 * 4 * 3 * 3 * 4 * 4
        assert simulate_time(padded, priced) - simulate_time(conv_arch, priced) == pytest.approx(
            2 * priced.beta + extra
        )

    def test_padded_target_times_like_a_deeper_family_member(self):
        """Test that three pads on a conv-conv-pool target cost exactly what a depth-6 member of its family costs."""
        target = with_classifier((8, 8, 3), conv_relu(8) + conv_relu(8) + [MaxPool(2, 2)], 4)
        space = ArchSpace(depth_range=(6, 6), kernel_choices=(3,), filter_choices=(8,), input_shape=(8, 8, 3), num_classes=4)
        model = CostModel(alpha=1e-9, beta=1e-5, gamma=2e-10)

        padded = pad_with_dummy_layers(target, 3)

        assert depth(padded) == 6
        assert simulate_time(padded, model) == pytest.approx(simulate_time(sample_random_architecture(space, 0), model))

    @pytest.mark.parametrize("kernel", [1, 3, 5])
    def test_padded_network_keeps_posteriors(self, blobs: LabeledDataset, kernel: int):
        """Test that padding a trained network leaves its outputs unchanged."""
        arch = with_classifier((8, 8, 3), [Conv2D(3, kernel)], 4)
        net = init_network(arch, 2)
        padded = pad_network(net, 3)

        assert depth(padded.arch) == depth(arch) + 3
        np.testing.assert_allclose(padded.predict_proba(blobs.inputs[:10]), net.predict_proba(blobs.inputs[:10]))
        np.testing.assert_allclose(forward(padded, blobs.inputs[0]), forward(net, blobs.inputs[0]))
