"""Small input-validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np


def check_sequence_array(X, n_steps=None, n_features=None):
    """Coerce X (array or SequenceTensor) to a finite (N, T, F) float64 array.

    Returns (data, valid_steps); valid_steps is None for raw arrays, where
    every step is treated as observed.
    """
    valid_steps = None
    if hasattr(X, "data") and hasattr(X, "valid_steps"):
        valid_steps = np.asarray(X.valid_steps, dtype=np.int64)
        X = X.data
    data = np.asarray(X, dtype=np.float64)
    if data.ndim != 3:
        raise ValueError(f"expected a 3-D (N, T, F) sequence array, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("sequence array contains non-finite values")
    if n_steps is not None and data.shape[1] != n_steps:
        raise ValueError(f"expected {n_steps} time steps, got {data.shape[1]}")
    if n_features is not None and data.shape[2] != n_features:
        raise ValueError(f"expected {n_features} features, got {data.shape[2]}")
    return data, valid_steps


def check_1d(values, name, n=None) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if n is not None and len(arr) != n:
        raise ValueError(f"{name} has length {len(arr)}, expected {n}")
    return arr
