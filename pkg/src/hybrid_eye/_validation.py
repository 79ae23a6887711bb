"""Input validation helpers shared across the package."""

import numpy as np

UNIT_TOL = 1e-3
ROTATION_TOL = 1e-6


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def check_array(x, shape=None, name="array", dtype=np.float64):
    """Convert ``x`` to a finite float array, optionally checking its trailing shape."""
    arr = np.asarray(x, dtype=dtype)
    if shape is not None:
        tail = arr.shape[len(arr.shape) - len(shape):]
        ok = len(arr.shape) >= len(shape) and all(
            want is None or want == got for want, got in zip(shape, tail)
        )
        if not ok:
            raise ValidationError(f"{name} must have trailing shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_unit_vectors(v, name="direction", tol=UNIT_TOL):
    """Return ``v`` normalized along the last axis.

    Vectors within ``tol`` of unit length are renormalized silently; anything
    further off is rejected.
    """
    arr = check_array(v, shape=(3,), name=name)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValidationError(f"{name} must be unit length (|v| within {tol} of 1)")
    return arr / norms


def check_rotation(R, name="rotation", tol=ROTATION_TOL):
    R = check_array(R, shape=(3, 3), name=name)
    if R.shape != (3, 3):
        raise ValidationError(f"{name} must be a single 3x3 matrix")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise ValidationError(f"{name} is not a proper rotation (orthogonal, det=+1)")
    return R


def check_positive(x, name="value", strict=True):
    x = float(x)
    if not np.isfinite(x) or (x <= 0 if strict else x < 0):
        raise ValidationError(f"{name} must be {'>' if strict else '>='} 0, got {x}")
    return x
