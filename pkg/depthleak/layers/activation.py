from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np

from ..base import Layer, Params, Shape
from ..constants import ActivationKind
from ..validation import ArchValidator


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class Activation(Layer):
    """Element-wise relu, or softmax over the last axis."""
    kind: ActivationKind = "relu"

    type: ClassVar[str] = "activation"

    def __post_init__(self):
        ArchValidator.validate_choice("activation kind", self.kind, ActivationKind)

    def output_shape(self, in_shape: Shape) -> Shape:
        return in_shape

    def forward(self, x: np.ndarray, params: Params) -> tuple[np.ndarray, Any]:
        if self.kind == "relu":
            return np.maximum(x, 0.0), x
        y = softmax(x)
        return y, y

    def backward(self, dy: np.ndarray, cache: Any, params: Params) -> tuple[np.ndarray, Params]:
        if self.kind == "relu":
            return dy * (cache > 0), {}
        y = cache
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True)), {}

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.type, "kind": self.kind}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Activation":
        return cls(kind=data.get("kind", "relu"))
