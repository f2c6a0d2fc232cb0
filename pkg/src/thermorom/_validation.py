"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array


def check_snapshots(X, n_features=None, name="X", ensure_min_samples=1):
    """Finite float64 2-D array, optionally with a fixed feature count."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=ensure_min_samples,
                    input_name=name)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"{name} has {X.shape[1]} features, expected {n_features}")
    return X


def check_vector(x, n=None, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {x.shape}")
    if n is not None and x.size != n:
        raise ValueError(f"{name} has length {x.size}, expected {n}")
    return x
