from typing import Any

from ..base import Layer
from .activation import Activation
from .conv import Conv2D
from .dense import Flatten, FullyConnected
from .pool import GlobalAvgPool, MaxPool

LAYER_TYPES: dict[str, type[Layer]] = {
    "conv": Conv2D,
    "maxpool": MaxPool,
    "fc": FullyConnected,
    "gap": GlobalAvgPool,
    "flatten": Flatten,
    "activation": Activation,
}


def layer_from_dict(data: dict[str, Any]) -> Layer:
    """Build a layer from its architecture JSON entry."""
    if not isinstance(data, dict) or "type" not in data:
        raise ValueError(f"Layer entry must be an object with a 'type' key, got {data!r}")

    layer_cls = LAYER_TYPES.get(data["type"])
    if layer_cls is None:
        raise ValueError(
            f"Invalid layer type: {data['type']}. "
            f"Valid types are: {tuple(LAYER_TYPES)}"
        )
    return layer_cls.from_dict(data)


__all__ = [
    "Activation",
    "Conv2D",
    "Flatten",
    "FullyConnected",
    "GlobalAvgPool",
    "MaxPool",
    "LAYER_TYPES",
    "layer_from_dict",
]
