"""Input validation shared by estimators, the CV harness and the explainers."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from edmri.errors import DegenerateInputError


def check_features(X, n_features=None):
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} feature columns, got {X.shape[1]}")
    return X


def check_fitted_dims(X, n_features):
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if X.shape[1] != n_features:
        raise ValueError(f"model was fitted on {n_features} features, got {X.shape[1]}")
    return X


def check_binary_labels(y, n=None, require_both=False):
    y = np.asarray(y).ravel()
    if n is not None and y.size != n:
        raise ValueError(f"expected {n} labels, got {y.size}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    y = y.astype(int)
    if require_both and (y.size == 0 or y.min() == y.max()):
        raise DegenerateInputError("training labels must contain both classes")
    return y
