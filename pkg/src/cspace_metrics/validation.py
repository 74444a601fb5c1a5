"""Input validation and angle helpers shared across the toolkit."""
from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def as_vector(x, size: int | None = None, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float array, optionally of fixed size."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValueError(f"{name} must have length {size}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_square_matrix(x, size: int | None = None, name: str = "matrix") -> np.ndarray:
    """Coerce to a square 2-D float array, optionally of fixed size."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValueError(f"{name} must be {size}x{size}, got {arr.shape[0]}x{arr.shape[1]}")
    return arr


def wrap_angle(x):
    """Wrap angles to the canonical interval (-pi, pi].

    Scalar in, scalar out; array in, array out.
    """
    arr = np.asarray(x, dtype=float)
    wrapped = np.remainder(arr + np.pi, TWO_PI) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    if wrapped.ndim == 0:
        return float(wrapped)
    return wrapped


def check_probability_vector(p, size: int | None = None, tol: float = 1e-9) -> np.ndarray:
    """Validate a probability vector: nonnegative, sums to one within tol."""
    arr = as_vector(p, size=size, name="probability vector")
    if np.any(arr < -tol):
        raise ValueError(f"probabilities must be nonnegative, got min {arr.min()}")
    total = arr.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"probabilities must sum to 1 within {tol}, got {total}")
    return np.clip(arr, 0.0, None)
