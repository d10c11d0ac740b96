"""Small input-checking helpers used at module boundaries."""
import numpy as np

from .exceptions import InvalidInputError


def as_vector(x, size=3, name="vector"):
    arr = np.asarray(x, dtype=float)
    if arr.shape != (size,):
        raise InvalidInputError(f"{name} must have shape ({size},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must be finite")
    return arr


def check_positive(value, name, strict=True):
    value = float(value)
    ok = value > 0 if strict else value >= 0
    if not (ok and np.isfinite(value)):
        cmp = ">" if strict else ">="
        raise InvalidInputError(f"{name} must be finite and {cmp} 0, got {value}")
    return value


def check_points(X, name="X"):
    """Validate an (n, 3) array of positions."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1 and arr.shape == (3,):
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInputError(f"{name} must have shape (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr
