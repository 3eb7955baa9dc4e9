import logging

import pytest
import numpy as np

from depthleak.arch import ArchitectureSpec, conv_relu, with_classifier
from depthleak.attack_data import ArchSpace, build_timing_dataset
from depthleak.codecs import DatasetSource, load_dataset
from depthleak.layers import MaxPool
from depthleak.network import TrainedNetwork
from depthleak.timing import CostModel
from depthleak.training import LabeledDataset, train_supervised


def numerical_gradient(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function with respect to every entry of x (modified in place)."""
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + eps
        plus = f()
        x[index] = original - eps
        minus = f()
        x[index] = original
        grad[index] = (plus - minus) / (2 * eps)
    return grad


@pytest.fixture(scope="session")
def blob_source() -> DatasetSource:
    return DatasetSource(num_classes=4, n_points=320, input_shape=(8, 8, 3), seed=7)


@pytest.fixture(scope="session")
def blobs(blob_source: DatasetSource) -> LabeledDataset:
    """Synthetic 4-class 8x8x3 blobs with train/val/test tags."""
    return load_dataset(blob_source)


@pytest.fixture(scope="session")
def linear_arch() -> ArchitectureSpec:
    """Flatten + dense classifier, depth 0."""
    return with_classifier((8, 8, 3), [], 4)


@pytest.fixture(scope="session")
def conv_arch() -> ArchitectureSpec:
    """One conv, one max pool and the classifier: depth 2."""
    return with_classifier((8, 8, 3), conv_relu(4) + [MaxPool(2, 2)], 4)


@pytest.fixture(scope="session")
def linear_target(linear_arch: ArchitectureSpec, blobs: LabeledDataset) -> TrainedNetwork:
    """A confident linear target trained on the blob train split."""
    return train_supervised(linear_arch, blobs, epochs=60, lr=0.05, seed=0)


@pytest.fixture(scope="session")
def fixed_size_space() -> ArchSpace:
    """Every counted layer is a 1x1 conv from 4 to 4 channels, so time is exactly affine in depth."""
    return ArchSpace(
        depth_range=(1, 6),
        kernel_choices=(1,),
        filter_choices=(4,),
        pool_policy="none",
        input_shape=(4, 4, 4),
        num_classes=4,
    )


@pytest.fixture(scope="session")
def affine_timing(fixed_size_space: ArchSpace):
    """Noise-free cost-model timing dataset whose times are affine in depth."""
    ds, _ = build_timing_dataset(fixed_size_space, 120, "cost-model", CostModel(), n_runs=2, seed=0)
    return ds


@pytest.fixture(autouse=True)
def _drop_cli_handlers():
    """Close the stream and sidecar handlers the CLI attaches to the root logger."""
    yield
    root = logging.getLogger()
    for handler in [h for h in root.handlers if getattr(h, "depthleak", False)]:
        root.removeHandler(handler)
        handler.close()
