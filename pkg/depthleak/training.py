import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .arch import ArchitectureSpec
from .base import Params
from .constants import SplitTag
from .network import (
    TrainedNetwork,
    TrainingHistory,
    backward_pass,
    check_batch,
    forward_pass,
    init_network,
)
from .validation import ArchValidator, DatasetValidator

logger = logging.getLogger(__name__)

LossKind = Literal["cross-entropy", "distillation"]


@dataclass(frozen=True)
class LabeledDataset:
    """
    Inputs with either hard class indices or soft posterior labels.

    Attributes:
        inputs: Array of shape (N, height, width, channels), values in [0, 1]
        labels: Shape (N,) integer classes or (N, num_classes) posteriors
        splits: Shape (N,) tags from {"train", "val", "test"}
    """
    inputs: np.ndarray
    labels: np.ndarray
    splits: np.ndarray = field(default=None)

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels)
        splits = (
            np.full(len(inputs), "train", dtype="<U5")
            if self.splits is None
            else np.asarray(self.splits, dtype="<U5")
        )

        if len(inputs) != len(labels) or len(inputs) != len(splits):
            raise ValueError(
                f"inputs ({len(inputs)}), labels ({len(labels)}) and splits ({len(splits)}) "
                "must have the same length"
            )
        if inputs.ndim != 4 and len(inputs):
            raise ValueError(f"inputs must have shape (N, height, width, channels), got {inputs.shape}")
        if not set(np.unique(splits)) <= {"train", "val", "test"}:
            raise ValueError(f"Invalid split tags: {sorted(set(np.unique(splits)))}")

        if labels.ndim == 2:
            labels = labels.astype(np.float64)
            if len(labels) and np.max(np.abs(labels.sum(axis=1) - 1.0)) > 1e-6:
                raise ValueError("Soft labels must sum to 1 within 1e-6")
        elif labels.ndim == 1:
            labels = labels.astype(np.int64)
        else:
            raise ValueError(f"labels must be 1-D classes or 2-D posteriors, got shape {labels.shape}")

        for name, array in (("inputs", inputs), ("labels", labels), ("splits", splits)):
            array.flags.writeable = False
            object.__setattr__(self, name, array)

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def is_soft(self) -> bool:
        return self.labels.ndim == 2

    def hard_labels(self) -> np.ndarray:
        """Class indices; soft labels are reduced by argmax."""
        return self.labels.argmax(axis=1) if self.is_soft else self.labels

    def take(self, indices: np.ndarray) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.inputs[indices], self.labels[indices], self.splits[indices])

    def split(self, tag: SplitTag) -> "LabeledDataset":
        return self.take(np.flatnonzero(self.splits == tag))

    def with_splits(self, splits: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.inputs, self.labels, splits)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Mean cross-entropy of hard labels.

    Returns:
        The loss and its gradient with respect to the logits
    """
    n = len(labels)
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.clip(picked, 1e-300, None))))

    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def distillation_loss(target_probs: np.ndarray, probs: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Mean over examples of sum_i (y_i^target - y_i^template)^2.

    Returns:
        The loss and its gradient with respect to the template logits
    """
    n = len(probs)
    diff = probs - target_probs
    loss = float(np.mean(np.sum(diff ** 2, axis=1)))

    dprobs = 2.0 * diff / n
    dlogits = probs * (dprobs - np.sum(dprobs * probs, axis=1, keepdims=True))
    return loss, dlogits


def loss_and_grads(
    arch: ArchitectureSpec,
    parameters: tuple[Params, ...] | list[Params],
    inputs: np.ndarray,
    targets: np.ndarray,
    loss: LossKind,
) -> tuple[float, list[Params]]:
    """Evaluate a loss on a batch and back-propagate it to every parameter."""
    probs, _, caches = forward_pass(arch, parameters, inputs)
    if loss == "cross-entropy":
        value, dlogits = cross_entropy(probs, targets)
    else:
        value, dlogits = distillation_loss(targets, probs)
    return value, backward_pass(arch, parameters, caches, dlogits)


def _train(
    arch: ArchitectureSpec,
    inputs: np.ndarray,
    targets: np.ndarray,
    loss: LossKind,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int,
    val: tuple[np.ndarray, np.ndarray] | None = None,
) -> TrainedNetwork:
    """Plain mini-batch SGD with a seeded shuffle; records per-epoch loss and val accuracy."""
    ArchValidator.validate_count("epochs", epochs)
    ArchValidator.validate_count("batch_size", batch_size)
    DatasetValidator.validate_learning_rate(lr)
    if len(inputs) == 0:
        raise ValueError("Cannot train on an empty dataset")
    inputs = check_batch(arch, inputs)

    params = init_network(arch, seed).copy_parameters()
    shuffle_rng = np.random.default_rng([seed, 1])
    history = TrainingHistory()

    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(inputs))
        total = 0.0
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            value, grads = loss_and_grads(arch, params, inputs[batch], targets[batch], loss)
            total += value * len(batch)
            for layer_params, layer_grads in zip(params, grads):
                for name in layer_params:
                    layer_params[name] -= lr * layer_grads[name]

        history.losses.append(total / len(inputs))
        if val is not None and len(val[0]):
            probs, _, _ = forward_pass(arch, params, val[0])
            history.val_accuracies.append(float(np.mean(probs.argmax(axis=1) == val[1])))

        logger.debug("epoch %d/%d loss=%.6f", epoch + 1, epochs, history.losses[-1])

    return TrainedNetwork(arch=arch, parameters=tuple(params), rng_seed=seed, history=history)


def train_supervised(
    arch: ArchitectureSpec,
    data: LabeledDataset,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
) -> TrainedNetwork:
    """
    Train a network on hard labels with cross-entropy.

    Uses the "train" split when the dataset is tagged, and records validation
    accuracy per epoch when a "val" split is present.

    Args:
        arch: Architecture to train
        data: Dataset with hard labels
        epochs: Number of passes over the training split
        lr: SGD step size; 0 leaves the initial parameters untouched
        seed: Seed for initialisation and shuffling
        batch_size: Mini-batch size

    Returns:
        Trained network with its training history
    """
    if data.is_soft:
        raise ValueError("train_supervised needs hard labels; use train_distilled for posteriors")

    train = data.split("train")
    if len(train) == 0:
        raise ValueError("Cannot train on an empty dataset")
    if train.labels.min() < 0 or train.labels.max() >= arch.num_classes:
        raise ValueError(f"labels must lie in [0, {arch.num_classes})")

    val = data.split("val")
    return _train(
        arch, train.inputs, train.labels, "cross-entropy", epochs, lr, seed, batch_size,
        val=(val.inputs, val.labels) if len(val) else None,
    )


def train_distilled(
    arch: ArchitectureSpec,
    inputs: np.ndarray,
    target_posteriors: np.ndarray,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
    val_inputs: np.ndarray | None = None,
    val_posteriors: np.ndarray | None = None,
) -> TrainedNetwork:
    """
    Train a substitute to mimic target posteriors under the L2 distillation loss.

    Args:
        arch: Substitute architecture
        inputs: Array of shape (N, *arch.input_shape)
        target_posteriors: Array of shape (N, num_classes)
        epochs: Number of passes
        lr: SGD step size
        seed: Seed for initialisation and shuffling
        batch_size: Mini-batch size
        val_inputs: Optional validation inputs
        val_posteriors: Posteriors for val_inputs; val accuracy is argmax agreement

    Returns:
        Trained substitute with its training history
    """
    target_posteriors = np.asarray(target_posteriors, dtype=np.float64)
    if len(inputs) != len(target_posteriors):
        raise ValueError(f"{len(inputs)} inputs but {len(target_posteriors)} posteriors")
    if target_posteriors.ndim != 2 or target_posteriors.shape[1] != arch.num_classes:
        raise ValueError(
            f"posteriors of shape {target_posteriors.shape} do not match num_classes={arch.num_classes}"
        )

    val = None
    if val_inputs is not None and val_posteriors is not None:
        val = (np.asarray(val_inputs, dtype=np.float64), np.asarray(val_posteriors).argmax(axis=1))

    return _train(arch, inputs, target_posteriors, "distillation", epochs, lr, seed, batch_size, val=val)


def evaluate(net: TrainedNetwork, data: LabeledDataset) -> float:
    """
    Fraction of examples whose argmax posterior equals the label.

    Soft labels are compared through their argmax.
    """
    if len(data) == 0:
        raise ValueError("Cannot evaluate on an empty split")
    return float(np.mean(net.predict(data.inputs) == data.hard_labels()))


def agreement(net_a: TrainedNetwork, net_b: TrainedNetwork, inputs: np.ndarray) -> float:
    """Fraction of inputs on which two networks predict the same class."""
    if net_a.arch.num_classes != net_b.arch.num_classes:
        raise ValueError(
            f"class counts differ: {net_a.arch.num_classes} vs {net_b.arch.num_classes}"
        )
    if len(inputs) == 0:
        raise ValueError("Cannot measure agreement on no inputs")
    return float(np.mean(net_a.predict(inputs) == net_b.predict(inputs)))
