"""Input validation helpers used at the public API boundaries."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NotPositiveDefinite, NotRotation, NotSkewSymmetric

ROTATION_ATOL = 1e-9
SKEW_ATOL = 1e-12


def check_vector3(v, name: str = "v") -> np.ndarray:
    """Return ``v`` as a finite float vector of length 3."""
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_matrix3(a, name: str = "A") -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.shape != (3, 3):
        raise ValueError(f"{name} must have shape (3, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_rotation(r, name: str = "R", atol: float = ROTATION_ATOL) -> np.ndarray:
    """Check membership in SO(3): orthogonal within ``atol`` and det = +1."""
    arr = check_matrix3(r, name)
    ortho = np.linalg.norm(arr.T @ arr - np.eye(3))
    if ortho > atol:
        raise NotRotation(f"{name} is not orthogonal: ||R^T R - I||_F = {ortho:.3e}")
    det = np.linalg.det(arr)
    if abs(det - 1.0) > atol:
        raise NotRotation(f"{name} has det = {det:.12f}, expected 1")
    return arr


def check_skew(s, name: str = "S", atol: float = SKEW_ATOL) -> np.ndarray:
    arr = check_matrix3(s, name)
    gap = np.linalg.norm(arr + arr.T)
    if gap > atol:
        raise NotSkewSymmetric(f"{name} is not skew-symmetric: ||S + S^T||_F = {gap:.3e}")
    return arr


def check_spd(a, name: str = "A", atol: float = 1e-12) -> np.ndarray:
    """Check symmetric positive-definiteness (any square size)."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got {arr.shape}")
    if np.linalg.norm(arr - arr.T) > atol * max(1.0, np.linalg.norm(arr)):
        raise NotPositiveDefinite(f"{name} is not symmetric")
    eigs = np.linalg.eigvalsh(arr)
    if eigs[0] <= 0.0:
        raise NotPositiveDefinite(f"{name} has non-positive eigenvalue {eigs[0]:.3e}")
    return arr


def as_matrix3(value, key: str) -> np.ndarray:
    """Parse a config entry into a 3x3 matrix.

    Accepts a scalar (multiple of the identity), a length-3 sequence
    (diagonal), or a full 3x3 nested list.
    """
    if np.isscalar(value):
        num = float(value)
        if not np.isfinite(num):
            raise ConfigError(key, "must be finite")
        return num * np.eye(3)
    arr = np.asarray(value, dtype=float)
    if arr.shape == (3,):
        arr = np.diag(arr)
    if arr.shape != (3, 3):
        raise ConfigError(key, f"must be a scalar, length-3 list, or 3x3 matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(key, "must be finite")
    return arr
