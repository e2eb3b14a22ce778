"""Input checks shared by the estimator front end."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionError


def check_images(X, name="X"):
    """Coerce to a finite float ``(N, H, W, 1)`` stack; ``(N, H, W)`` gains the channel axis."""
    X = check_array(X, ensure_2d=False, allow_nd=True, dtype=np.float64, input_name=name)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4:
        raise DimensionError(f"{name} must be (N, H, W) or (N, H, W, D), got shape {X.shape}")
    return X


def check_label_maps(y, shape, n_classes=None):
    """Integer class maps matching the spatial ``shape``; returns ``(y, n_classes)``."""
    y = check_array(y, ensure_2d=False, allow_nd=True, dtype=None, input_name="y")
    if y.shape != tuple(shape):
        raise DimensionError(f"y must have shape {tuple(shape)}, got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise ValueError("y must hold integer class indices")
        y = y.astype(np.int64)
    if y.min() < 0:
        raise ValueError("class indices must be non-negative")
    k = int(y.max()) + 1
    if n_classes is None:
        n_classes = max(k, 2)
    elif k > n_classes:
        raise ValueError(f"y holds class {k - 1} but the model has {n_classes} classes")
    return y, n_classes


def check_domain_ids(ids, n, default):
    if ids is None:
        return np.full(n, default, dtype=int)
    ids = np.asarray(ids, dtype=int).ravel()
    if ids.shape[0] != n:
        raise DimensionError(f"expected {n} domain ids, got {ids.shape[0]}")
    return ids
