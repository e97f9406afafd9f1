"""Input validation helpers shared by the public API."""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionMismatchError


def as_vector(x, n: int | None = None, name: str = "x") -> np.ndarray:
    """Coerce to a float64 1-D array, optionally checking its length."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{name} must be 1-D, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise DimensionMismatchError(f"{name} must have length {n}, got {arr.shape[0]}")
    return arr


def as_matrix(M, shape: tuple[int, int] | None = None, name: str = "M") -> np.ndarray:
    """Coerce to a float64 2-D array, optionally checking its shape."""
    arr = np.asarray(M, dtype=float)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None:
        # None entries in the expected shape act as wildcards
        ok = all(want is None or have == want for have, want in zip(arr.shape, shape))
        if not ok:
            raise DimensionMismatchError(
                f"{name} must have shape {tuple(shape)}, got {arr.shape}"
            )
    return arr


def check_spd(P, name: str = "P") -> np.ndarray:
    """Validate that P is symmetric positive definite (via Cholesky)."""
    arr = as_matrix(P, name=name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got {arr.shape}")
    if not np.allclose(arr, arr.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(arr)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} must be positive definite") from exc
    return arr


def ensure_rng(seed) -> np.random.Generator:
    """Return a numpy Generator from a seed, Generator, or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
