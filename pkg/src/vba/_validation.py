"""Input checks shared by the estimator and the CLI."""

import numpy as np
from sklearn.utils.validation import check_array


def check_matrix(a, name, n_features=None):
    """Return ``a`` as a finite 2-D float64 array (1-D input becomes one column)."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    a = check_array(a, dtype=np.float64, ensure_2d=True, input_name=name)
    if n_features is not None and a.shape[1] != n_features:
        raise ValueError(f"{name} has {a.shape[1]} features, expected {n_features}")
    return a


def check_triplets(x, y, z=None, n_features=None):
    """Validate matching ``(n, d)`` treatment, outcome and (optional) confounder blocks."""
    x = check_matrix(x, "X", n_features)
    d = x.shape[1]
    y = check_matrix(y, "Y", d)
    arrays = [x, y]
    if z is not None:
        arrays.append(check_matrix(z, "Z", d))
    n = {a.shape[0] for a in arrays}
    if len(n) != 1:
        raise ValueError(f"inconsistent numbers of rows: {[a.shape[0] for a in arrays]}")
    return tuple(arrays)


def check_positive_int(value, name, allow_zero=False):
    if isinstance(value, bool) or int(value) != value:
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ValueError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value}")
    return int(value)
