"""Input validation helpers shared by the estimators and functional API."""
import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionMismatch


def as_points(x, name="points"):
    """Return ``x`` as a float array of shape (n, d).

    Scalars become a single 1-d point and flat sequences are read as
    n points in one dimension.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return check_array(arr, ensure_2d=True, dtype=float, input_name=name)


def as_vector(x, name="vector"):
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_matrix(x, name="matrix", shape=None):
    """Return ``x`` as a 2-d float array; scalars become 1x1."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if shape is not None:
        for want, got in zip(shape, arr.shape):
            if want is not None and want != got:
                raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def check_covariance(cov, name="covariance", sym_tol=1e-10, psd_tol=1e-10):
    cov = as_matrix(cov, name)
    if cov.shape[0] != cov.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got {cov.shape}")
    if np.max(np.abs(cov - cov.T), initial=0.0) > sym_tol:
        raise ValueError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -psd_tol:
        raise ValueError(f"{name} is not positive semidefinite")
    return cov


def check_stochastic(mat, name="matrix", tol=1e-12):
    mat = as_matrix(mat, name)
    if np.any(mat < 0):
        raise ValueError(f"{name} has negative entries")
    if np.max(np.abs(mat.sum(axis=1) - 1.0)) > tol:
        raise ValueError(f"rows of {name} do not sum to 1")
    return mat


def check_positive(value, name):
    value = float(value)
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value
