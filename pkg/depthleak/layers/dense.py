from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np

from ..base import Layer, Params, Shape
from ..exceptions import ShapeError
from ..validation import ArchValidator


@dataclass(frozen=True)
class FullyConnected(Layer):
    """
    Dense layer computing x @ W + b.

    Attributes:
        in_features: Input width (m)
        out_features: Output width (n)
    """
    in_features: int
    out_features: int

    type: ClassVar[str] = "fc"
    counted: ClassVar[bool] = True

    def __post_init__(self):
        ArchValidator.validate_count("in_features", self.in_features)
        ArchValidator.validate_count("out_features", self.out_features)

    def output_shape(self, in_shape: Shape) -> Shape:
        if in_shape != (self.in_features,):
            raise ShapeError(f"fc expects ({self.in_features},), got {in_shape}")
        return (self.out_features,)

    def param_shapes(self, in_shape: Shape) -> dict[str, Shape]:
        return {"W": (self.in_features, self.out_features), "b": (self.out_features,)}

    def init_params(self, in_shape: Shape, rng: np.random.Generator) -> Params:
        scale = 1.0 / np.sqrt(self.in_features)
        return {
            "W": rng.uniform(-scale, scale, size=(self.in_features, self.out_features)),
            "b": rng.uniform(-scale, scale, size=(self.out_features,)),
        }

    def multiplications(self, in_shape: Shape) -> int:
        return self.in_features * self.out_features

    def forward(self, x: np.ndarray, params: Params) -> tuple[np.ndarray, Any]:
        return np.einsum("ni,io->no", x, params["W"]) + params["b"], x

    def backward(self, dy: np.ndarray, cache: Any, params: Params) -> tuple[np.ndarray, Params]:
        x = cache
        return dy @ params["W"].T, {"W": x.T @ dy, "b": dy.sum(axis=0)}

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.type, "in": self.in_features, "out": self.out_features}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FullyConnected":
        return cls(in_features=data["in"], out_features=data["out"])


@dataclass(frozen=True)
class Flatten(Layer):
    """Collapse a spatial map into a feature vector in row-major order."""

    type: ClassVar[str] = "flatten"

    def output_shape(self, in_shape: Shape) -> Shape:
        return (int(np.prod(in_shape)),)

    def forward(self, x: np.ndarray, params: Params) -> tuple[np.ndarray, Any]:
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy: np.ndarray, cache: Any, params: Params) -> tuple[np.ndarray, Params]:
        return dy.reshape(cache), {}

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.type}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Flatten":
        return cls()
