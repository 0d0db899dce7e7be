"""Small input-validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np


class NotFittedError(RuntimeError):
    pass


def check_is_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() before using this method"
        )


def as_float_array(values, name, ndim=None):
    arr = np.asarray(values, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def require_finite(values, name):
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def require_channels(table, names):
    missing = [n for n in names if n not in table.channels]
    if missing:
        raise KeyError(f"table is missing channels {missing}; have {sorted(table.channels)}")
