import json
from dataclasses import dataclass, field
from typing import Any, Iterable

from .base import Layer, Shape
from .exceptions import ShapeError
from .layers import Activation, Conv2D, Flatten, FullyConnected, GlobalAvgPool, MaxPool, layer_from_dict
from .validation import ArchValidator


@dataclass(frozen=True)
class LayerCost:
    """Analytic cost of one layer at its position in an architecture."""
    index: int
    type: str
    in_shape: Shape
    out_shape: Shape
    multiplications: int
    comparisons: int
    params: int


@dataclass(frozen=True)
class ArchitectureSpec:
    """
    Ordered layer descriptions with the input shape they consume.

    The unit of search, timing and training. Construction validates that
    shapes propagate through every layer and that the final output has
    num_classes entries; a failing layer is reported by index.

    Attributes:
        input_shape: (height, width, channels)
        layers: Ordered layers, the classifier included explicitly
        num_classes: Length of the output posterior
    """
    input_shape: Shape
    layers: tuple[Layer, ...]
    num_classes: int
    _shapes: tuple[Shape, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        ArchValidator.validate_shape(self.input_shape)
        ArchValidator.validate_count("num_classes", self.num_classes)

        shapes = [self.input_shape]
        for index, layer in enumerate(self.layers):
            if not isinstance(layer, Layer):
                raise TypeError(f"layer {index} must be a Layer, got {type(layer).__name__}")
            if isinstance(layer, Activation) and layer.kind == "softmax" and index != len(self.layers) - 1:
                raise ShapeError("softmax is only allowed as the final layer", index)
            try:
                shapes.append(tuple(layer.output_shape(shapes[-1])))
            except ShapeError as e:
                raise ShapeError(str(e), index) from None

        if shapes[-1] != (self.num_classes,):
            raise ShapeError(
                f"final output shape {shapes[-1]} does not match num_classes={self.num_classes}",
                len(self.layers) - 1 if self.layers else None,
            )
        object.__setattr__(self, "_shapes", tuple(shapes))

    @property
    def shapes(self) -> tuple[Shape, ...]:
        """Per-example shapes: the input followed by every layer output."""
        return self._shapes

    def classifier_index(self) -> int | None:
        """Index of the terminal classifier: the last weight-bearing layer when it is dense."""
        for index in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[index]
            if isinstance(layer, (Conv2D, FullyConnected)):
                return index if isinstance(layer, FullyConnected) else None
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    def to_json(self) -> str:
        """Canonical single-line JSON, stable across runs."""
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ArchitectureSpec":
        try:
            return cls(
                input_shape=tuple(data["input_shape"]),
                layers=tuple(layer_from_dict(entry) for entry in data["layers"]),
                num_classes=data["num_classes"],
            )
        except KeyError as e:
            raise ValueError(f"Architecture JSON is missing key {e}") from None

    @classmethod
    def from_json(cls, text: str) -> "ArchitectureSpec":
        return cls.from_dict(json.loads(text))


def layer_costs(arch: ArchitectureSpec) -> list[LayerCost]:
    """
    Break an architecture down into per-layer analytic costs.

    Convolutions cost o_w*o_h*c_o*f_w*f_h*c_i multiplications, dense layers
    m*n, and max pooling o_w*o_h*c_o*k*k comparisons (kept apart from
    multiplications).
    """
    return [
        LayerCost(
            index=index,
            type=layer.type,
            in_shape=arch.shapes[index],
            out_shape=arch.shapes[index + 1],
            multiplications=layer.multiplications(arch.shapes[index]),
            comparisons=layer.comparisons(arch.shapes[index]),
            params=layer.param_count(arch.shapes[index]),
        )
        for index, layer in enumerate(arch.layers)
    ]


def multiplication_count(arch: ArchitectureSpec) -> int:
    return sum(cost.multiplications for cost in layer_costs(arch))


def comparison_count(arch: ArchitectureSpec) -> int:
    return sum(cost.comparisons for cost in layer_costs(arch))


def param_count(arch: ArchitectureSpec) -> int:
    return sum(cost.params for cost in layer_costs(arch))


def depth(arch: ArchitectureSpec) -> int:
    """
    Count the sequentially executed conv, maxpool and dense layers.

    The terminal classifier is not counted, so a reference list such as
    [32(3), 32(3), MP, 64(3), 64(3), MP, 128(3), 128(3), MP] followed by its
    classifier has depth 9.
    """
    classifier = arch.classifier_index()
    return sum(
        1 for index, layer in enumerate(arch.layers)
        if layer.counted and index != classifier
    )


def describe(arch: ArchitectureSpec) -> str:
    """Render the "filters(kernel), MP, GAP" notation used for architecture listings."""
    parts = []
    for layer in arch.layers:
        if isinstance(layer, Conv2D):
            stride = f"/s{layer.stride}" if layer.stride != 1 else ""
            parts.append(f"{layer.out_channels}({layer.kernel}){stride}")
        elif isinstance(layer, MaxPool):
            parts.append("MP")
        elif isinstance(layer, GlobalAvgPool):
            parts.append("GAP")
    return "[" + ", ".join(parts) + "]"


def with_classifier(
    input_shape: Shape,
    body: Iterable[Layer],
    num_classes: int,
    head: str = "flatten",
) -> ArchitectureSpec:
    """
    Close a feature-extractor body with a classifier.

    Args:
        input_shape: (height, width, channels)
        body: Layers preceding the classifier
        num_classes: Classifier width
        head: "flatten" for Flatten + FC, "gap" for GlobalAvgPool + FC

    Returns:
        The validated architecture
    """
    body = list(body)
    shape = tuple(input_shape)
    for index, layer in enumerate(body):
        try:
            shape = tuple(layer.output_shape(shape))
        except ShapeError as e:
            raise ShapeError(str(e), index) from None

    pool = GlobalAvgPool() if head == "gap" else Flatten()
    features = pool.output_shape(shape)[0] if len(shape) == 3 else shape[0]
    layers = body + ([pool] if len(shape) == 3 else []) + [FullyConnected(features, num_classes)]
    return ArchitectureSpec(input_shape=tuple(input_shape), layers=tuple(layers), num_classes=num_classes)


def conv_relu(filters: int, kernel: int = 3, stride: int = 1) -> list[Layer]:
    return [Conv2D(filters, kernel, stride, "same"), Activation("relu")]


VGG_PRESETS: dict[int, tuple[int | str, ...]] = {
    1: (32, 32, "MP", 64, 64, "MP", 128, 128, "MP"),
    2: (32, 32, "MP", 64, 64, "MP", 128, 128, "MP", 256, "MP"),
    3: (32, 32, "MP", 64, 64, "MP", 128, 128, 128, "MP", 256, 256, "MP"),
}


def vgg_preset(model: int, input_shape: Shape = (32, 32, 3), num_classes: int = 10) -> ArchitectureSpec:
    """
    Build one of the three VGG-like reference targets (depths 9, 11 and 13).

    Args:
        model: 1, 2 or 3
        input_shape: (height, width, channels)
        num_classes: Classifier width

    Returns:
        Architecture of 3x3 same-padded convs with 2x2 max pooling, closed by
        Flatten and a dense classifier
    """
    if model not in VGG_PRESETS:
        raise ValueError(f"Invalid preset: {model}. Valid presets are: {tuple(VGG_PRESETS)}")

    body: list[Layer] = []
    for entry in VGG_PRESETS[model]:
        body += [MaxPool(2, 2)] if entry == "MP" else conv_relu(int(entry))
    return with_classifier(input_shape, body, num_classes)
