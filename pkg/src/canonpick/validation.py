"""Input validation helpers shared by the estimator classes and the functional core."""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_points",
    "as_vector3",
    "check_finite",
    "check_rotation",
    "check_positive",
]


def as_points(x, name="points", allow_empty=False):
    """Coerce to a contiguous float64 (N, 3) array.

    Accepts anything np.asarray handles. Raises ValueError on wrong shape,
    non-finite entries, or emptiness unless allow_empty is set.
    """
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {arr.shape}")
    if not allow_empty and arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_vector3(x, name="vector"):
    """Coerce to a float64 (3,) vector with finite entries."""
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got shape {np.shape(x)}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_finite(x, name="array"):
    arr = np.asarray(x)
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_rotation(r, name="rotation", tol=1e-6):
    """Validate a proper rotation matrix (orthonormal, det +1)."""
    arr = np.asarray(r, dtype=np.float64)
    if arr.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3, got {arr.shape}")
    err = np.abs(arr.T @ arr - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"{name} is not orthonormal (max deviation {err:.3g})")
    if np.linalg.det(arr) < 0:
        raise ValueError(f"{name} has negative determinant (reflection)")
    return arr


def check_positive(value, name="value", strict=True):
    v = float(value)
    if strict and not v > 0:
        raise ValueError(f"{name} must be > 0, got {v}")
    if not strict and v < 0:
        raise ValueError(f"{name} must be >= 0, got {v}")
    return v
