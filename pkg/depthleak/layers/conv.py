from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..base import Layer, Params, Shape
from ..constants import InitScheme, Padding
from ..exceptions import ShapeError
from ..validation import ArchValidator


def window_geometry(size: int, kernel: int, stride: int, padding: Padding) -> tuple[int, int, int]:
    """Return (output size, pad before, pad after) along one spatial axis."""
    if padding == "valid":
        if size < kernel:
            raise ShapeError(f"kernel {kernel} exceeds spatial size {size}")
        return (size - kernel) // stride + 1, 0, 0

    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def strided_windows(x: np.ndarray, kernel: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """View of an NHWC batch as (N, out_h, out_w, C, kernel, kernel) windows."""
    windows = sliding_window_view(x, (kernel, kernel), axis=(1, 2))
    return windows[:, ::stride, ::stride][:, :out_h, :out_w]


@dataclass(frozen=True)
class Conv2D(Layer):
    """
    2D convolution over NHWC inputs with square kernels.

    Attributes:
        out_channels: Number of filters (c_o)
        kernel: Kernel side length in pixels (f_h = f_w)
        stride: Step between windows in pixels
        padding: "same" keeps ceil(size / stride) outputs, "valid" uses no padding
        init: "uniform" for seeded random weights, "identity" for a pass-through kernel
    """
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: Padding = "same"
    init: InitScheme = "uniform"

    type: ClassVar[str] = "conv"
    counted: ClassVar[bool] = True

    def __post_init__(self):
        ArchValidator.validate_count("out_channels", self.out_channels)
        ArchValidator.validate_count("kernel", self.kernel)
        ArchValidator.validate_count("stride", self.stride)
        ArchValidator.validate_choice("padding", self.padding, Padding)
        ArchValidator.validate_choice("init", self.init, InitScheme)

    def _geometry(self, in_shape: Shape) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
        if len(in_shape) != 3:
            raise ShapeError(f"conv expects a spatial input, got shape {in_shape}")
        h, w, _ = in_shape
        return (
            window_geometry(h, self.kernel, self.stride, self.padding),
            window_geometry(w, self.kernel, self.stride, self.padding),
        )

    def output_shape(self, in_shape: Shape) -> Shape:
        (out_h, _, _), (out_w, _, _) = self._geometry(in_shape)
        return out_h, out_w, self.out_channels

    def param_shapes(self, in_shape: Shape) -> dict[str, Shape]:
        return {
            "W": (self.kernel, self.kernel, in_shape[2], self.out_channels),
            "b": (self.out_channels,),
        }

    def init_params(self, in_shape: Shape, rng: np.random.Generator) -> Params:
        shapes = self.param_shapes(in_shape)
        if self.init == "identity":
            if in_shape[2] != self.out_channels or self.stride != 1 or self.padding != "same":
                raise ShapeError(
                    "identity init needs matching channels, stride 1 and same padding"
                )
            W = np.zeros(shapes["W"])
            center = (self.kernel - 1) // 2
            W[center, center] = np.eye(self.out_channels)
            return {"W": W, "b": np.zeros(shapes["b"])}

        fan_in = self.kernel * self.kernel * in_shape[2]
        scale = 1.0 / np.sqrt(fan_in)
        return {
            "W": rng.uniform(-scale, scale, size=shapes["W"]),
            "b": rng.uniform(-scale, scale, size=shapes["b"]),
        }

    def multiplications(self, in_shape: Shape) -> int:
        out_h, out_w, out_c = self.output_shape(in_shape)
        return out_h * out_w * out_c * self.kernel * self.kernel * in_shape[2]

    def forward(self, x: np.ndarray, params: Params) -> tuple[np.ndarray, Any]:
        (out_h, top, bottom), (out_w, left, right) = self._geometry(x.shape[1:])
        padded = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
        windows = strided_windows(padded, self.kernel, self.stride, out_h, out_w)

        y = np.einsum("nhwcij,ijco->nhwo", windows, params["W"]) + params["b"]
        return y, (x.shape, padded.shape, windows, top, left)

    def backward(self, dy: np.ndarray, cache: Any, params: Params) -> tuple[np.ndarray, Params]:
        x_shape, padded_shape, windows, top, left = cache
        _, out_h, out_w, _ = dy.shape
        k, s = self.kernel, self.stride

        dW = np.einsum("nhwcij,nhwo->ijco", windows, dy)
        db = dy.sum(axis=(0, 1, 2))
        dwindows = np.einsum("nhwo,ijco->nhwcij", dy, params["W"])

        dpadded = np.zeros(padded_shape)
        for i in range(k):
            for j in range(k):
                dpadded[:, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s, :] += dwindows[..., i, j]

        dx = dpadded[:, top:top + x_shape[1], left:left + x_shape[2], :]
        return dx, {"W": dW, "b": db}

    def to_dict(self) -> dict[str, Any]:
        data = {
            "type": self.type,
            "filters": self.out_channels,
            "kernel": self.kernel,
            "stride": self.stride,
            "padding": self.padding,
        }
        if self.init != "uniform":
            data["init"] = self.init
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Conv2D":
        return cls(
            out_channels=data["filters"],
            kernel=data.get("kernel", 3),
            stride=data.get("stride", 1),
            padding=data.get("padding", "same"),
            init=data.get("init", "uniform"),
        )
