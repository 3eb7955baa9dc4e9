from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np

from ..base import Layer, Params, Shape
from ..exceptions import ShapeError
from ..validation import ArchValidator
from .conv import strided_windows, window_geometry


@dataclass(frozen=True)
class MaxPool(Layer):
    """Max pooling with square windows and no padding."""
    kernel: int = 2
    stride: int = 2

    type: ClassVar[str] = "maxpool"
    counted: ClassVar[bool] = True

    def __post_init__(self):
        ArchValidator.validate_count("kernel", self.kernel)
        ArchValidator.validate_count("stride", self.stride)

    def output_shape(self, in_shape: Shape) -> Shape:
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool expects a spatial input, got shape {in_shape}")
        h, w, c = in_shape
        out_h, _, _ = window_geometry(h, self.kernel, self.stride, "valid")
        out_w, _, _ = window_geometry(w, self.kernel, self.stride, "valid")
        return out_h, out_w, c

    def comparisons(self, in_shape: Shape) -> int:
        out_h, out_w, c = self.output_shape(in_shape)
        return out_h * out_w * c * self.kernel * self.kernel

    def forward(self, x: np.ndarray, params: Params) -> tuple[np.ndarray, Any]:
        out_h, out_w, _ = self.output_shape(x.shape[1:])
        windows = strided_windows(x, self.kernel, self.stride, out_h, out_w)
        flat = windows.reshape(*windows.shape[:4], self.kernel * self.kernel)

        # argmax picks the first maximum, so ties route the gradient to one input
        argmax = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
        return y, (x.shape, argmax)

    def backward(self, dy: np.ndarray, cache: Any, params: Params) -> tuple[np.ndarray, Params]:
        x_shape, argmax = cache
        n, h, w, c = np.indices(dy.shape)
        rows = h * self.stride + argmax // self.kernel
        cols = w * self.stride + argmax % self.kernel

        dx = np.zeros(x_shape)
        np.add.at(dx, (n, rows, cols, c), dy)
        return dx, {}

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.type, "kernel": self.kernel, "stride": self.stride}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MaxPool":
        return cls(kernel=data.get("kernel", 2), stride=data.get("stride", 2))


@dataclass(frozen=True)
class GlobalAvgPool(Layer):
    """Average over both spatial axes, producing one value per channel."""

    type: ClassVar[str] = "gap"

    def output_shape(self, in_shape: Shape) -> Shape:
        if len(in_shape) != 3:
            raise ShapeError(f"gap expects a spatial input, got shape {in_shape}")
        return (in_shape[2],)

    def forward(self, x: np.ndarray, params: Params) -> tuple[np.ndarray, Any]:
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, dy: np.ndarray, cache: Any, params: Params) -> tuple[np.ndarray, Params]:
        _, h, w, _ = cache
        dx = np.broadcast_to(dy[:, None, None, :] / (h * w), cache)
        return np.array(dx), {}

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.type}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GlobalAvgPool":
        return cls()
