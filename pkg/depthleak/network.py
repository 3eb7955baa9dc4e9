import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .arch import ArchitectureSpec
from .base import Params
from .exceptions import ShapeError
from .layers import Activation
from .layers.activation import softmax

logger = logging.getLogger(__name__)

BLOB_DTYPE = np.dtype("<f8")


@dataclass
class TrainingHistory:
    """Per-epoch training curve recorded by the trainers."""
    losses: list[float] = field(default_factory=list)
    val_accuracies: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class TrainedNetwork:
    """
    An architecture together with its parameters.

    Parameters are stored per layer as read-only float64 arrays, so a
    network can be shared between threads; trainers work on copies.

    Attributes:
        arch: The architecture the parameters belong to
        parameters: One dict per layer ("W"/"b" for weight-bearing layers, empty otherwise)
        rng_seed: Seed the parameters were initialised from
        history: Training curve, empty for freshly initialised networks
    """
    arch: ArchitectureSpec
    parameters: tuple[Params, ...]
    rng_seed: int = 0
    history: TrainingHistory = field(default_factory=TrainingHistory, compare=False)

    def __post_init__(self):
        if len(self.parameters) != len(self.arch.layers):
            raise ShapeError(
                f"expected parameters for {len(self.arch.layers)} layers, got {len(self.parameters)}"
            )

        frozen = []
        for index, (layer, params) in enumerate(zip(self.arch.layers, self.parameters)):
            expected = layer.param_shapes(self.arch.shapes[index])
            if set(params) != set(expected):
                raise ShapeError(f"parameter names {sorted(params)} != {sorted(expected)}", index)

            layer_params = {}
            for name, shape in expected.items():
                array = np.array(params[name], dtype=np.float64)
                if array.shape != tuple(shape):
                    raise ShapeError(f"{name} has shape {array.shape}, expected {tuple(shape)}", index)
                array.flags.writeable = False
                layer_params[name] = array
            frozen.append(layer_params)
        object.__setattr__(self, "parameters", tuple(frozen))

    def predict_proba(self, inputs: np.ndarray) -> np.ndarray:
        """
        Compute posteriors for a batch.

        Args:
            inputs: Array of shape (N, height, width, channels)

        Returns:
            Array of shape (N, num_classes) whose rows sum to 1
        """
        probs, _, _ = forward_pass(self.arch, self.parameters, inputs)
        return probs

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        return self.predict_proba(inputs).argmax(axis=1)

    def copy_parameters(self) -> list[Params]:
        return [{name: array.copy() for name, array in params.items()} for params in self.parameters]


def logit_layer_count(arch: ArchitectureSpec) -> int:
    """Number of leading layers producing logits; a trailing softmax is applied separately."""
    if arch.layers and isinstance(arch.layers[-1], Activation) and arch.layers[-1].kind == "softmax":
        return len(arch.layers) - 1
    return len(arch.layers)


def check_batch(arch: ArchitectureSpec, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 4 or inputs.shape[1:] != arch.input_shape:
        raise ShapeError(
            f"input batch shape {inputs.shape} does not match (N, *{arch.input_shape})", 0
        )
    return inputs


def forward_pass(
    arch: ArchitectureSpec,
    parameters: tuple[Params, ...] | list[Params],
    inputs: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, list[Any]]:
    """
    Run a batch through every layer.

    Returns:
        Posteriors, logits and the per-layer caches needed by backward_pass
    """
    x = check_batch(arch, inputs)
    caches = []
    for layer, params in zip(arch.layers[:logit_layer_count(arch)], parameters):
        x, cache = layer.forward(x, params)
        caches.append(cache)
    return softmax(x), x, caches


def backward_pass(
    arch: ArchitectureSpec,
    parameters: tuple[Params, ...] | list[Params],
    caches: list[Any],
    dlogits: np.ndarray,
) -> list[Params]:
    """Back-propagate a logit gradient, returning one gradient dict per layer."""
    grads: list[Params] = [{} for _ in arch.layers]
    dx = dlogits
    for index in range(logit_layer_count(arch) - 1, -1, -1):
        dx, grads[index] = arch.layers[index].backward(dx, caches[index], parameters[index])
    return grads


def init_network(arch: ArchitectureSpec, seed: int) -> TrainedNetwork:
    """
    Initialise parameters uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)].

    Identity-flagged convolutions receive pass-through kernels instead.
    """
    rng = np.random.default_rng(seed)
    parameters = tuple(
        layer.init_params(arch.shapes[index], rng)
        for index, layer in enumerate(arch.layers)
    )
    return TrainedNetwork(arch=arch, parameters=parameters, rng_seed=seed)


def forward(net: TrainedNetwork, x: np.ndarray) -> np.ndarray:
    """
    Compute the posterior of a single input.

    Args:
        net: The network to run
        x: Input of shape arch.input_shape

    Returns:
        Probability vector of length num_classes

    Raises:
        ShapeError: If x does not match the input shape (reported at layer 0)
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != net.arch.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match {net.arch.input_shape}", 0)
    return net.predict_proba(x[None])[0]


def save_network(net: TrainedNetwork, path: str | Path) -> Path:
    """
    Persist a network as a JSON header plus a flat little-endian float64 blob.

    Args:
        net: Network to save
        path: Header path; the blob is written next to it with a .bin suffix

    Returns:
        Path of the written header
    """
    header_path = Path(path)
    blob_path = header_path.with_suffix(".bin")

    tensors, chunks, offset = [], [], 0
    for index, params in enumerate(net.parameters):
        for name in sorted(params):
            array = params[name]
            tensors.append({"layer": index, "name": name, "shape": list(array.shape), "offset": offset})
            chunks.append(array.astype(BLOB_DTYPE).ravel())
            offset += array.size

    header = {
        "arch": net.arch.to_dict(),
        "rng_seed": net.rng_seed,
        "dtype": BLOB_DTYPE.str,
        "blob": blob_path.name,
        "count": offset,
        "tensors": tensors,
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype=BLOB_DTYPE)
    blob_path.write_bytes(blob.tobytes())

    logger.debug("Saved network with %d parameters to %s", offset, header_path)
    return header_path


def load_network(path: str | Path) -> TrainedNetwork:
    """Load a network written by save_network."""
    header_path = Path(path)
    header = json.loads(header_path.read_text())
    blob = np.frombuffer((header_path.parent / header["blob"]).read_bytes(), dtype=BLOB_DTYPE)
    if blob.size != header["count"]:
        raise ValueError(f"Weight blob holds {blob.size} values, header declares {header['count']}")

    arch = ArchitectureSpec.from_dict(header["arch"])
    parameters: list[Params] = [{} for _ in arch.layers]
    for tensor in header["tensors"]:
        size = int(np.prod(tensor["shape"]))
        values = blob[tensor["offset"]:tensor["offset"] + size]
        parameters[tensor["layer"]][tensor["name"]] = values.reshape(tensor["shape"])
    return TrainedNetwork(arch=arch, parameters=tuple(parameters), rng_seed=header["rng_seed"])
