"""Input validation helpers shared by the estimators and core functions."""

import numpy as np

from .exceptions import InputError


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    # min/max propagate NaN and expose Inf; avoids a full boolean temp
    if arr.size and not (np.isfinite(arr.min()) and np.isfinite(arr.max())):
        raise InputError(f"{name} contains non-finite values")
    return arr


def as_float32_grid(x, ndim: int, name: str = "array") -> np.ndarray:
    """Coerce x to a C-contiguous float32 array of the given rank."""
    arr = np.asarray(x)
    if arr.ndim != ndim:
        raise InputError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise InputError(f"{name} is empty")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    return check_finite(arr, name)


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise InputError(f"{what} have mismatched shapes {a.shape} vs {b.shape}")


def volume_data(x) -> np.ndarray:
    """Accept a Volume3, RelevanceVolume, or bare ndarray; return (t,h,w) float32."""
    from .volume import Volume3

    inner = getattr(x, "volume", x)  # RelevanceVolume -> Volume3
    if isinstance(inner, Volume3):
        return inner.data
    return as_float32_grid(inner, 3, "volume")
