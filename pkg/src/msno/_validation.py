"""Exceptions and input-checking helpers shared across the package."""

from __future__ import annotations

import numpy as np


class MsnoError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(MsnoError, ValueError):
    pass


class ShapeError(MsnoError, ValueError):
    pass


class DegenerateFieldError(MsnoError, ValueError):
    pass


class CovarianceError(MsnoError, np.linalg.LinAlgError):
    pass


class FactorizationError(MsnoError, np.linalg.LinAlgError):
    pass


class EigenResidualError(MsnoError, np.linalg.LinAlgError):
    pass


class UndefinedMetricError(MsnoError, ZeroDivisionError):
    pass


class RankDeficiencyError(MsnoError, ValueError):
    pass


class NotFittedError(MsnoError, AttributeError):
    pass


class DatasetError(MsnoError):
    pass


class ChecksumError(DatasetError):
    pass


class SchemaVersionError(DatasetError):
    pass


class MissingFileError(DatasetError, FileNotFoundError):
    pass


class DivergenceError(MsnoError, FloatingPointError):
    pass


def check_field(values, grid=None, *, name="field", positive=False) -> np.ndarray:
    """Return ``values`` as a float64 ``(n_fine, n_fine)`` array.

    Flat vectors of length ``n_fine**2`` are reshaped (y-outer, x-inner).
    """
    arr = np.asarray(values, dtype=np.float64)
    if grid is not None:
        n = grid.n_fine
        if arr.ndim == 1 and arr.size == n * n:
            arr = arr.reshape(n, n)
        if arr.shape != (n, n):
            raise ShapeError(f"{name} has shape {arr.shape}, expected {(n, n)}")
    elif arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if positive and np.any(arr <= 0):
        raise ValueError(f"{name} must be strictly positive (min {arr.min():.3g})")
    return arr


def check_positive_int(value, name, minimum=1) -> int:
    if int(value) != value or value < minimum:
        raise ConfigurationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_is_fitted(estimator, attributes):
    if isinstance(attributes, str):
        attributes = [attributes]
    if not all(getattr(estimator, a, None) is not None for a in attributes):
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet; call 'fit' first."
        )
