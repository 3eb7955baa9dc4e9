import math
from typing import Any, get_args

import numpy as np


class ArchValidator:
    """Shared validation logic for layer and architecture descriptions."""

    @staticmethod
    def validate_count(name: str, value: Any, minimum: int = 1):
        """Validate that value is an integer no smaller than minimum."""
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            raise TypeError(f"{name} must be an integer, got {type(value).__name__}")

        if value < minimum:
            raise ValueError(f"{name} must be >= {minimum}, got {value}")

    @staticmethod
    def validate_choice(name: str, value: Any, choices: Any):
        """Validate that value is one of the members of a Literal alias."""
        valid = get_args(choices)
        if value not in valid:
            raise ValueError(f"Invalid {name}: {value}. Valid values are: {valid}")

    @staticmethod
    def validate_shape(shape: Any):
        """Validate an (height, width, channels) input shape."""
        if not isinstance(shape, (tuple, list)) or len(shape) != 3:
            raise ValueError(f"Input shape must be (height, width, channels), got {shape!r}")

        for name, dim in zip(("height", "width", "channels"), shape):
            ArchValidator.validate_count(name, dim)


class DatasetValidator:
    """Shared validation logic for labeled datasets and posteriors."""

    @staticmethod
    def validate_posterior(posterior: Any, atol: float = 1e-6):
        """Validate that posterior is a finite probability vector."""
        posterior = np.asarray(posterior, dtype=np.float64)
        if posterior.ndim != 1 or posterior.size == 0:
            raise ValueError(f"Posterior must be a non-empty vector, got shape {posterior.shape}")

        if not np.all(np.isfinite(posterior)) or np.any(posterior < 0):
            raise ValueError("Posterior entries must be finite and non-negative")

        if abs(posterior.sum() - 1.0) > atol:
            raise ValueError(f"Posterior must sum to 1, got {posterior.sum():.8f}")

    @staticmethod
    def validate_fraction(name: str, value: Any, open_low: bool = False, open_high: bool = False):
        """Validate a number in [0, 1], optionally excluding either end."""
        if isinstance(value, bool) or not isinstance(value, (int, float, np.floating)):
            raise TypeError(f"{name} must be a number, got {type(value).__name__}")

        low_ok = value > 0 if open_low else value >= 0
        high_ok = value < 1 if open_high else value <= 1
        if not (low_ok and high_ok and math.isfinite(value)):
            raise ValueError(f"{name} must lie in the unit interval, got {value}")

    @staticmethod
    def validate_learning_rate(lr: Any, allow_zero: bool = True):
        """Validate a finite, non-negative learning rate."""
        if isinstance(lr, bool) or not isinstance(lr, (int, float, np.floating)):
            raise TypeError(f"Learning rate must be a number, got {type(lr).__name__}")

        if not math.isfinite(lr) or lr < 0 or (lr == 0 and not allow_zero):
            raise ValueError(f"Learning rate must be positive, got {lr}")


class TimingValidator:
    """Shared validation logic for timing models."""

    @staticmethod
    def validate_non_negative(name: str, value: Any):
        """Validate a finite number >= 0."""
        if isinstance(value, bool) or not isinstance(value, (int, float, np.floating)):
            raise TypeError(f"{name} must be a number, got {type(value).__name__}")

        if not math.isfinite(value) or value < 0:
            raise ValueError(f"{name} must be >= 0, got {value}")

    @staticmethod
    def validate_positive(name: str, value: Any):
        """Validate a finite number > 0."""
        TimingValidator.validate_non_negative(name, value)
        if value == 0:
            raise ValueError(f"{name} must be > 0, got {value}")


class SearchValidator:
    """Shared validation logic for architecture-search settings."""

    @staticmethod
    def validate_choices(name: str, choices: Any):
        """Validate a non-empty tuple of distinct positive integers."""
        if not isinstance(choices, (tuple, list)) or not choices:
            raise ValueError(f"{name} must be a non-empty sequence, got {choices!r}")

        for value in choices:
            ArchValidator.validate_count(name, value)
        if len(set(choices)) != len(choices):
            raise ValueError(f"{name} must not repeat values, got {choices!r}")

    @staticmethod
    def validate_clip(clip: Any):
        """Validate a (low, high) clip range with low < high."""
        if not isinstance(clip, (tuple, list)) or len(clip) != 2:
            raise ValueError(f"Reward clip must be a (low, high) pair, got {clip!r}")

        low, high = clip
        if not (math.isfinite(low) and math.isfinite(high)) or low >= high:
            raise ValueError(f"Reward clip needs low < high, got {clip!r}")
