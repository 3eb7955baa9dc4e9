from abc import ABC, abstractmethod
from typing import Any, ClassVar

import numpy as np

Shape = tuple[int, ...]
Params = dict[str, np.ndarray]


class Layer(ABC):
    """
    Abstract base class for network layers.

    Every layer is an immutable description (the LayerSpec of an architecture)
    that also knows how to propagate shapes, run forward and backward passes
    on NHWC batches, and report its analytic cost.
    """

    type: ClassVar[str]
    counted: ClassVar[bool] = False

    @abstractmethod
    def output_shape(self, in_shape: Shape) -> Shape:
        """
        Compute the per-example output shape.

        Args:
            in_shape: Per-example input shape, (height, width, channels) or (features,)

        Returns:
            Per-example output shape

        Raises:
            ShapeError: If the layer cannot consume an input of this shape
        """
        pass

    @abstractmethod
    def forward(self, x: np.ndarray, params: Params) -> tuple[np.ndarray, Any]:
        """
        Run the layer on a batch.

        Args:
            x: Batch with a leading example axis
            params: Layer parameters as created by init_params

        Returns:
            Output batch and a cache consumed by backward
        """
        pass

    @abstractmethod
    def backward(self, dy: np.ndarray, cache: Any, params: Params) -> tuple[np.ndarray, Params]:
        """
        Back-propagate an output gradient.

        Args:
            dy: Gradient of the loss with respect to the layer output
            cache: Cache returned by forward
            params: Layer parameters

        Returns:
            Gradient with respect to the input and a dict of parameter gradients
        """
        pass

    def param_shapes(self, in_shape: Shape) -> dict[str, Shape]:
        return {}

    def init_params(self, in_shape: Shape, rng: np.random.Generator) -> Params:
        return {}

    def multiplications(self, in_shape: Shape) -> int:
        return 0

    def comparisons(self, in_shape: Shape) -> int:
        return 0

    def param_count(self, in_shape: Shape) -> int:
        return int(sum(np.prod(shape) for shape in self.param_shapes(in_shape).values()))

    @abstractmethod
    def to_dict(self) -> dict[str, Any]:
        """Serialize to the architecture JSON layer format."""
        pass
