"""Input-validation helpers shared across the package.

Raising a consistent exception hierarchy lets the CLI map failures to its
stable exit codes (configuration error vs. numeric failure).
"""

from __future__ import annotations

import numpy as np


class ValidationError(ValueError):
    """Bad user-supplied data: shapes, ranges, malformed files."""


class ConfigurationError(ValueError):
    """Bad configuration: unknown variants, out-of-range hyperparameters."""


class NumericError(RuntimeError):
    """Non-finite values where finite ones are required."""


def as_float_array(x, name: str = "input") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_unit_range(x: np.ndarray, name: str = "input") -> np.ndarray:
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValidationError(f"{name} must lie in [0, 1], got range [{x.min()}, {x.max()}]")
    return x


def check_labels(y, n_classes: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValidationError(f"labels must be 1-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if np.any(arr != np.floor(arr)):
            raise ValidationError("labels must be integers")
        arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
        raise ValidationError(f"labels must lie in [0, {n_classes}), got range [{arr.min()}, {arr.max()}]")
    return arr.astype(np.int64)


def require(condition: bool, message: str, kind: type[Exception] = ConfigurationError) -> None:
    if not condition:
        raise kind(message)
