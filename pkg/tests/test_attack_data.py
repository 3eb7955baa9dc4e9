import logging
from collections import Counter

import pytest
import numpy as np
from sklearn.model_selection import train_test_split

from depthleak import attack_data
from depthleak.arch import depth, param_count
from depthleak.attack_data import (
    ArchSpace,
    TargetOracle,
    TimingDataset,
    TimingSample,
    build_timing_dataset,
    calibrate_threshold,
    depth_time_correlation,
    membership_mask,
    membership_test,
    poison_timing_dataset,
    reconstruct_training_set,
    sample_random_architecture,
)
from depthleak.exceptions import ClockUnavailableError
from depthleak.layers import Conv2D, MaxPool
from depthleak.network import TrainedNetwork, init_network
from depthleak.regression import fit, score
from depthleak.timing import CostModel, simulate_time
from depthleak.training import LabeledDataset

SMALL_SPACE = ArchSpace(
    depth_range=(1, 6), kernel_choices=(3,), filter_choices=(4,), input_shape=(8, 8, 3), num_classes=4,
)


class TestArchSpace:
    """Test random architecture sampling."""

    def test_singleton_space(self):
        """Test that a space with one choice everywhere yields one architecture."""
        space = ArchSpace(depth_range=(5, 5), kernel_choices=(3,), filter_choices=(32,))
        archs = {sample_random_architecture(space, seed).to_json() for seed in range(5)}

        assert len(archs) == 1
        assert depth(sample_random_architecture(space, 0)) == 5

    def test_depth_is_uniform(self):
        """Test that 1000 draws over depths 5 to 24 hit every depth within 4 binomial sigma."""
        space = ArchSpace(depth_range=(5, 24), kernel_choices=(3,), filter_choices=(4,), input_shape=(8, 8, 3))
        counts = Counter(depth(sample_random_architecture(space, seed)) for seed in range(1000))
        sigma = np.sqrt(1000 * (1 / 20) * (19 / 20))

        assert set(counts) == set(range(5, 25))
        assert all(abs(count - 50) <= 4 * sigma for count in counts.values())

    def test_deterministic(self):
        """Test that a seed always gives the same architecture."""
        space = ArchSpace()

        assert sample_random_architecture(space, 17) == sample_random_architecture(space, 17)

    @pytest.mark.parametrize("policy", ["every-second", "strided-conv", "none"])
    def test_pool_policy(self, policy: str):
        """Test how each policy downsamples a 16x16 input."""
        space = ArchSpace(
            depth_range=(6, 6), kernel_choices=(3,), filter_choices=(4,), pool_policy=policy,
            input_shape=(16, 16, 3), num_classes=2,
        )
        arch = sample_random_architecture(space, 0)
        pools = [layer for layer in arch.layers if isinstance(layer, MaxPool)]
        strided = [layer for layer in arch.layers if isinstance(layer, Conv2D) and layer.stride == 2]

        assert depth(arch) == 6
        match policy:
            case "every-second":
                assert len(pools) == 2 and not strided
            case "strided-conv":
                assert len(strided) == 2 and not pools
            case "none":
                assert not pools and not strided

    def test_invalid_space(self):
        """Test space validation."""
        with pytest.raises(ValueError):
            ArchSpace(depth_range=(5, 3))
        with pytest.raises(ValueError):
            ArchSpace(pool_policy="avg")


class TestBuildTimingDataset:
    """Test the attacker dataset build."""

    def test_hundred_architectures(self):
        """Test row count, tags and depth/parameter bookkeeping."""
        model = CostModel()
        ds, archs = build_timing_dataset(SMALL_SPACE, 100, "cost-model", model, n_runs=3, seed=0)

        assert len(ds) == 100 and len(archs) == 100
        assert not ds.is_partial
        assert ds.mode == "cost-model"
        assert ds.cost_model_id == model.model_id
        assert {s.hardware_tag for s in ds.samples} == {model.model_id}
        for sample, arch in zip(ds.samples, archs):
            assert sample.depth == depth(arch)
            assert sample.n_params == param_count(arch)
            assert sample.mean_time_s == pytest.approx(simulate_time(arch, model))

    def test_single_architecture(self):
        """Test a one-row build."""
        ds, _ = build_timing_dataset(SMALL_SPACE, 1, cost_model=CostModel(), n_runs=1)

        assert len(ds) == 1

    def test_exactly_affine(self, affine_timing: TimingDataset):
        """Test that noise-free fixed-size rows lie on a line in depth."""
        slope, intercept = np.polyfit(affine_timing.depths, affine_timing.times, 1)
        residual = affine_timing.times - (slope * affine_timing.depths + intercept)

        assert np.abs(residual).max() <= 1e-12 * affine_timing.times.max()
        assert depth_time_correlation(affine_timing) == pytest.approx(1.0)

    def test_deterministic(self):
        """Test that the same seed reproduces every row."""
        model = CostModel(noise_sigma=0.1)
        first, _ = build_timing_dataset(SMALL_SPACE, 20, cost_model=model, n_runs=2, seed=5)
        second, _ = build_timing_dataset(SMALL_SPACE, 20, cost_model=model, n_runs=2, seed=5)

        assert first == second

    def test_failed_timing_is_skipped(self, monkeypatch: pytest.MonkeyPatch, caplog: pytest.LogCaptureFixture):
        """Test that a failing architecture is dropped, logged and the dataset flagged partial."""
        time_one = attack_data._time_one

        def flaky(arch, index, *args):
            if index == 3:
                raise RuntimeError("device busy")
            return time_one(arch, index, *args)

        monkeypatch.setattr(attack_data, "_time_one", flaky)
        with caplog.at_level(logging.WARNING, logger="depthleak.attack_data"):
            ds, archs = build_timing_dataset(SMALL_SPACE, 10, cost_model=CostModel(), n_runs=1)

        assert len(ds) == 9 and len(archs) == 9
        assert ds.is_partial
        assert "arch-0003" not in {s.arch_id for s in ds.samples}
        assert "device busy" in caplog.text

    def test_clock_failure_aborts(self, monkeypatch: pytest.MonkeyPatch):
        """Test that a missing clock is not treated as a per-architecture failure."""
        def no_clock(*args, **kwargs):
            raise ClockUnavailableError("no clock")

        monkeypatch.setattr(attack_data, "measure_wall", no_clock)
        with pytest.raises(ClockUnavailableError):
            build_timing_dataset(SMALL_SPACE, 3, mode="wall", n_runs=1, hardware_tag="test-host")

    def test_wall_mode(self):
        """Test a small measured build tagged with the given hardware name."""
        ds, _ = build_timing_dataset(SMALL_SPACE, 3, mode="wall", n_runs=2, hardware_tag="test-host")

        assert ds.mode == "wall"
        assert ds.cost_model_id is None
        assert {s.hardware_tag for s in ds.samples} == {"test-host"}

    def test_cost_model_required(self):
        """Test that cost-model mode needs coefficients."""
        with pytest.raises(ValueError):
            build_timing_dataset(SMALL_SPACE, 3, mode="cost-model", cost_model=None)

    def test_mixed_hardware_rejected(self):
        """Test that one dataset holds one hardware tag."""
        samples = (TimingSample("a", 1, 10, 1e-3, 1, "x"), TimingSample("b", 2, 10, 2e-3, 1, "y"))

        with pytest.raises(ValueError):
            TimingDataset(samples, mode="wall")

    @pytest.mark.parametrize("kwargs", [{"depth": 0}, {"mean_time_s": 0.0}])
    def test_invalid_sample(self, kwargs: dict):
        """Test that depth is at least 1 and time is positive."""
        fields = {"arch_id": "a", "depth": 3, "n_params": 1, "mean_time_s": 1e-3, "n_runs": 1, "hardware_tag": "h"}

        with pytest.raises(ValueError):
            TimingSample(**{**fields, **kwargs})


class TestPoisoning:
    """Test attacker-dataset poisoning."""

    def test_zero_fraction(self, affine_timing: TimingDataset):
        """Test that poisoning nothing keeps the dataset."""
        assert poison_timing_dataset(affine_timing, 0.0).samples == affine_timing.samples

    def test_full_label_flip(self, affine_timing: TimingDataset):
        """Test that every label changes and times are kept."""
        poisoned = poison_timing_dataset(affine_timing, 1.0, "label-flip", seed=2)

        assert np.all(poisoned.depths != affine_timing.depths)
        np.testing.assert_array_equal(poisoned.times, affine_timing.times)
        assert poisoned.depths.min() >= affine_timing.depths.min()
        assert poisoned.depths.max() <= affine_timing.depths.max()

    def test_time_shift(self, affine_timing: TimingDataset):
        """Test that floor(fraction * N) times move by a factor within [1/4, 4]."""
        poisoned = poison_timing_dataset(affine_timing, 0.3, "time-shift", seed=1)
        ratio = poisoned.times / affine_timing.times

        assert np.count_nonzero(ratio != 1.0) == int(0.3 * len(affine_timing))
        assert np.all((ratio >= 0.25 - 1e-12) & (ratio <= 4.0 + 1e-12))
        np.testing.assert_array_equal(poisoned.depths, affine_timing.depths)

    def test_original_untouched(self, affine_timing: TimingDataset):
        """Test that the clean dataset is never modified."""
        before = affine_timing.samples
        poison_timing_dataset(affine_timing, 0.5, seed=3)

        assert affine_timing.samples is before

    def test_invalid_fraction(self, affine_timing: TimingDataset):
        """Test the fraction range."""
        with pytest.raises(ValueError):
            poison_timing_dataset(affine_timing, 1.5)

    @pytest.mark.parametrize("kind", ["ridge", "random-forest"])
    def test_label_flip_raises_holdout_error(self, kind: str):
        """Test that flipping 30% of the training depths raises holdout MSE in each of ten seeds."""
        for seed in range(10):
            ds, _ = build_timing_dataset(ArchSpace(), 100, cost_model=CostModel(noise_sigma=0.08, seed=seed), seed=seed)
            train_idx, test_idx = train_test_split(np.arange(len(ds)), test_size=0.3, random_state=seed)
            train, holdout = ds.take(train_idx), ds.take(test_idx)

            clean = score(fit(kind, train, seed=seed), holdout).mse
            poisoned = score(fit(kind, poison_timing_dataset(train, 0.3, seed=seed), seed=seed), holdout).mse

            assert poisoned > clean


class TestMembership:
    """Test membership thresholding and training-set reconstruction."""

    @pytest.mark.parametrize("posterior, threshold, expected", [
        ([0.95, 0.02, 0.03], 0.9, "member"),
        ([0.4, 0.3, 0.3], 0.9, "non-member"),
        ([0.25, 0.25, 0.25, 0.25], 0.25, "non-member"),
        ([0.5, 0.5], 0.5, "non-member"),
    ])
    def test_rule(self, posterior: list, threshold: float, expected: str):
        """Test the strict maximum-posterior rule."""
        assert membership_test(np.array(posterior), threshold) == expected

    @pytest.mark.parametrize("posterior", [[0.5, 0.6], [1.2, -0.2], [], [[0.5, 0.5]]])
    def test_malformed_posterior(self, posterior: list):
        """Test that non-probability vectors are rejected."""
        with pytest.raises(ValueError):
            membership_test(np.array(posterior), 0.9)

    def test_recall_on_training_members(self, linear_target: TrainedNetwork, blobs: LabeledDataset):
        """Test that a confident target flags most of its own training inputs."""
        mask, _ = membership_mask(linear_target, blobs.split("train").inputs, 0.9)

        assert mask.mean() >= 0.8

    def test_reconstruction_is_soft_labeled(self, linear_target: TrainedNetwork, blobs: LabeledDataset):
        """Test that members carry the target's full posteriors."""
        pool = blobs.inputs[:50]
        recon = reconstruct_training_set(linear_target, pool, 0.9)

        assert recon.is_soft
        assert recon.labels.shape[1] == 4
        assert np.all(recon.labels.max(axis=1) > 0.9)
        np.testing.assert_allclose(recon.labels, linear_target.predict_proba(recon.inputs))

    def test_high_threshold_gives_empty_set(self, linear_arch, caplog: pytest.LogCaptureFixture):
        """Test that an unconfident target yields an empty set with a warning."""
        pool = np.random.default_rng(0).uniform(size=(20, 8, 8, 3))

        with caplog.at_level(logging.WARNING, logger="depthleak.attack_data"):
            recon = reconstruct_training_set(init_network(linear_arch, 0), pool, 0.99)

        assert len(recon) == 0
        assert "threshold" in caplog.text

    def test_empty_pool(self, linear_target: TrainedNetwork):
        """Test that an empty candidate pool is rejected."""
        with pytest.raises(ValueError):
            reconstruct_training_set(linear_target, np.zeros((0, 8, 8, 3)), 0.9)

    def test_calibration(self, linear_target: TrainedNetwork, blobs: LabeledDataset):
        """Test that higher thresholds never select more inputs."""
        noise = np.random.default_rng(1).uniform(size=(50, 8, 8, 3))
        points = calibrate_threshold(linear_target, blobs.split("train").inputs, noise)

        selected = [p.n_selected for p in points]
        assert selected == sorted(selected, reverse=True)
        assert all(0.0 <= p.precision <= 1.0 and 0.0 <= p.recall <= 1.0 for p in points)


class TestTargetOracle:
    """Test black-box query accounting."""

    def test_constant_queries_across_depths(self):
        """Test that timing a target costs n_runs queries whatever its depth."""
        x = np.random.default_rng(0).uniform(size=(8, 8, 3))
        for d in range(1, 6):
            space = ArchSpace(depth_range=(d, d), kernel_choices=(3,), filter_choices=(4,), input_shape=(8, 8, 3))
            oracle = TargetOracle(init_network(sample_random_architecture(space, 0), 0), "cost-model", CostModel())

            oracle.mean_query_time(x, 20)

            assert oracle.query_count == 20

    def test_query_returns_posterior_and_time(self, conv_arch):
        """Test one query against forward and the cost model."""
        net = init_network(conv_arch, 1)
        model = CostModel()
        oracle = TargetOracle(net, "cost-model", model)
        x = np.random.default_rng(2).uniform(size=conv_arch.input_shape)

        posterior, elapsed = oracle.query(x)

        np.testing.assert_allclose(posterior, net.predict_proba(x[None])[0])
        assert elapsed == pytest.approx(simulate_time(conv_arch, model))
        assert oracle.num_classes == 4

    def test_wall_query_runs_the_target_once(self, conv_arch, monkeypatch: pytest.MonkeyPatch):
        """Test that a wall-mode query times one inference and returns that inference's posterior."""
        net = init_network(conv_arch, 1)
        x = np.random.default_rng(3).uniform(size=conv_arch.input_shape)
        expected = net.predict_proba(x[None])[0]
        predict_proba = TrainedNetwork.predict_proba
        batches = []

        def counted(self, inputs):
            batches.append(len(inputs))
            return predict_proba(self, inputs)

        monkeypatch.setattr(TrainedNetwork, "predict_proba", counted)
        oracle = TargetOracle(net, "wall")

        for n in range(1, 4):
            posterior, elapsed = oracle.query(x)
            assert batches == [1] * n
        np.testing.assert_allclose(posterior, expected)
        assert elapsed >= 0.0
        assert oracle.query_count == 3

    def test_wall_mean_time_costs_n_runs_inferences(self, conv_arch, monkeypatch: pytest.MonkeyPatch):
        """Test that averaging over 20 queries runs the target exactly 20 times."""
        net = init_network(conv_arch, 1)
        predict_proba = TrainedNetwork.predict_proba
        calls = []

        def counted(self, inputs):
            calls.append(1)
            return predict_proba(self, inputs)

        monkeypatch.setattr(TrainedNetwork, "predict_proba", counted)
        TargetOracle(net, "wall").mean_query_time(np.zeros(conv_arch.input_shape), 20)

        assert len(calls) == 20
