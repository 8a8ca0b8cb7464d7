"""Input validation helpers in the style of ``sklearn.utils.validation``."""
import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import InputError


def check_images(X, square=True):
    """Return ``X`` as a float64 (n, m, m) stack of finite images."""
    X = np.asarray(X)
    if X.ndim == 2 and square:
        X = X[None]
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_all_finite=True)
    if X.ndim != 3:
        raise InputError(f"expected an (n, m, m) image stack, got shape {X.shape}")
    if square and X.shape[1] != X.shape[2]:
        raise InputError(f"images must be square, got {X.shape[1]}x{X.shape[2]}")
    return X


def check_labels(y, n_samples=None, n_classes=None):
    y = np.asarray(y)
    if y.ndim != 1:
        raise InputError(f"labels must be 1-D, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise InputError("labels must be integer class indices")
    y = y.astype(np.int64)
    if n_samples is not None and y.shape[0] != n_samples:
        raise InputError(f"expected {n_samples} labels, got {y.shape[0]}")
    if y.size and y.min() < 0:
        raise InputError("labels must be non-negative")
    if n_classes is not None and y.size and y.max() >= n_classes:
        raise InputError(f"labels must be < {n_classes}")
    return y
