"""Input validation helpers, in the spirit of sklearn.utils.validation."""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionMismatchError


def check_vector(v, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float64 array."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def check_same_dimension(a: np.ndarray, b: np.ndarray, what: str = "vectors") -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionMismatchError(
            f"{what} have incompatible dimensions {a.shape[-1]} and {b.shape[-1]}"
        )


def check_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
    return arr


def check_square_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = check_matrix(m, name)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr
