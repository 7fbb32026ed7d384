"""Input validation helpers shared by the estimators and functional APIs."""

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length


def check_labeled(X, y, *, min_samples=1):
    """Validate a design matrix and binary label vector.

    Returns float64 ``X`` of shape (n, d) and int64 ``y`` of shape (n,).
    Missing or non-finite entries in ``X`` are rejected.
    """
    X = check_array(X, dtype=np.float64, ensure_all_finite=True,
                    ensure_min_samples=min_samples)
    y = np.asarray(y)
    if y.ndim != 1:
        y = y.ravel()
    check_consistent_length(X, y)
    labels = np.unique(y)
    if not np.isin(labels, (0, 1)).all():
        raise ValueError(f"labels must be 0/1, got {labels.tolist()}")
    return X, y.astype(np.int64)


def check_binary_scores(scores, y):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(y).ravel()
    if scores.shape != y.shape:
        raise ValueError(
            f"length mismatch: {scores.shape[0]} scores vs {y.shape[0]} labels")
    if scores.size == 0:
        raise ValueError("empty input")
    if not np.isin(np.unique(y), (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return scores, y.astype(np.int64)


def require_both_classes(y, what):
    counts = np.bincount(y, minlength=2)
    missing = [c for c in (0, 1) if counts[c] == 0]
    if missing:
        raise ValueError(f"{what} requires both classes; class {missing[0]} is empty")
    return counts


def check_random_state_int(seed):
    """Seeds are plain non-negative integers so that runs are reproducible."""
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return int(seed)
