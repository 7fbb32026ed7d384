"""Class-imbalance resampling: ROS, SMOTE, ADASYN, ENN, Tomek links, hybrids.

Every function takes a :class:`~wavecnn.data.LabeledMatrix` and returns a
new one together with a :class:`ResampleReport`. Oversamplers keep the
original rows in order and append synthetic rows; cleaners only delete
rows, and never rows of the minority class. The minority class is the
smaller one, with label 1 winning a tie, so after SMOTE has balanced the
classes the event class is still the one protected by ENN/Tomek cleaning.

The estimator classes at the bottom wrap the functions in the
``fit_resample(X, y)`` protocol familiar from imbalanced-learn.
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_labeled, check_random_state_int, require_both_classes
from .data import LabeledMatrix
from .neighbors import NeighborModel


@dataclass
class ResampleReport:
    method: str
    counts_before: tuple
    counts_after: tuple
    synthetic_range: tuple = (0, 0)
    removed: tuple = ()
    seed: int = None
    params: dict = field(default_factory=dict)
    phases: list = field(default_factory=list)

    @property
    def n_synthetic(self):
        return self.synthetic_range[1] - self.synthetic_range[0]

    def to_dict(self):
        d = asdict(self)
        d["counts_before"] = list(self.counts_before)
        d["counts_after"] = list(self.counts_after)
        d["synthetic_range"] = list(self.synthetic_range)
        d["removed"] = [int(i) for i in self.removed]
        return d


def _counts(y):
    return tuple(int(c) for c in np.bincount(y, minlength=2))


def minority_label(y):
    c = np.bincount(y, minlength=2)
    return 0 if c[0] < c[1] else 1


def _coerce(data):
    X, y = check_labeled(*data)
    return X, y


def _append(X, y, X_new, label):
    X_out = np.vstack([X, X_new]) if len(X_new) else X.copy()
    y_out = np.concatenate([y, np.full(len(X_new), label, dtype=np.int64)])
    return LabeledMatrix(X_out, y_out)


def random_oversample(data, seed=0):
    """Duplicate minority rows (with replacement) until the classes balance."""
    X, y = _coerce(data)
    seed = check_random_state_int(seed)
    counts = require_both_classes(y, "random_oversample")
    label = minority_label(y)
    need = int(counts.max() - counts.min())
    rng = np.random.default_rng(seed)
    members = np.flatnonzero(y == label)
    picks = members[rng.integers(len(members), size=need)]
    out = _append(X, y, X[picks], label)
    return out, ResampleReport("ros", _counts(y), _counts(out.y), (len(y), len(out.y)), seed=seed)


def _segment_samples(X_min, neighbors, bases, rng):
    """x_b + lam * (x_nn - x_b) with a random neighbour per base."""
    if len(bases) == 0:
        return np.empty((0, X_min.shape[1]))
    picks = rng.integers(neighbors.shape[1], size=len(bases))
    lam = rng.random(len(bases))[:, None]
    base = X_min[bases]
    return base + lam * (X_min[neighbors[bases, picks]] - base)


def _minority_neighbors(X_min, k, what):
    m = len(X_min)
    if m < 2:
        raise ValueError(f"{what} needs at least 2 minority samples, got {m}")
    if k < 1:
        raise ValueError("k must be >= 1")
    k_eff = min(k, m - 1)
    return NeighborModel(k_eff).fit(X_min).kneighbors(return_distance=False), k_eff


def smote(data, k=5, seed=0):
    """SMOTE: interpolate between minority samples and their minority neighbours.

    Parameters
    ----------
    data : LabeledMatrix
    k : int, default=5
        Neighbours per minority sample, clamped to ``minority_count - 1``.
    seed : int, default=0

    Returns
    -------
    LabeledMatrix, ResampleReport
        Synthetic rows are appended until both classes have equal counts.
    """
    X, y = _coerce(data)
    seed = check_random_state_int(seed)
    counts = require_both_classes(y, "smote")
    label = minority_label(y)
    X_min = X[y == label]
    nn, k_eff = _minority_neighbors(X_min, k, "smote")
    need = int(counts.max() - counts.min())
    rng = np.random.default_rng(seed)
    bases = rng.integers(len(X_min), size=need)
    out = _append(X, y, _segment_samples(X_min, nn, bases, rng), label)
    return out, ResampleReport("smote", _counts(y), _counts(out.y), (len(y), len(out.y)),
                               seed=seed, params={"k": int(k_eff)})


def adasyn_allocation(hardness, total):
    """Split ``total`` synthetics in proportion to per-sample hardness ratios.

    Falls back to a uniform split when every ratio is zero. Each share is
    rounded half up, so the sum may differ from ``total`` by rounding.
    """
    hardness = np.asarray(hardness, dtype=np.float64)
    s = hardness.sum()
    weights = np.full(len(hardness), 1.0 / len(hardness)) if s == 0 else hardness / s
    return np.floor(weights * total + 0.5).astype(np.int64)


def adasyn(data, k=5, beta=1.0, seed=0):
    """ADASYN: SMOTE with more synthetics near majority-dominated minority points.

    For minority sample i, ``r_i`` is the majority share of its ``k`` nearest
    neighbours in the full data. ``G = beta * (majority - minority)``
    synthetics are split in proportion to ``r_i`` and generated by the SMOTE
    segment rule over minority neighbours.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    X, y = _coerce(data)
    seed = check_random_state_int(seed)
    counts = require_both_classes(y, "adasyn")
    label = minority_label(y)
    min_idx = np.flatnonzero(y == label)
    X_min = X[min_idx]
    nn_min, k_eff = _minority_neighbors(X_min, k, "adasyn")

    k_full = min(k, len(y) - 1)
    full = NeighborModel(k_full).fit(X)
    nn_full = full.kneighbors(return_distance=False)[min_idx]
    hardness = (y[nn_full] != label).sum(axis=1) / k_full
    G = int(math.floor(beta * (counts.max() - counts.min()) + 0.5))
    per_sample = adasyn_allocation(hardness, G)

    rng = np.random.default_rng(seed)
    bases = np.repeat(np.arange(len(X_min)), per_sample)
    out = _append(X, y, _segment_samples(X_min, nn_min, bases, rng), label)
    return out, ResampleReport(
        "adasyn", _counts(y), _counts(out.y), (len(y), len(out.y)), seed=seed,
        params={"k": int(k_eff), "beta": float(beta), "G": G,
                "allocation": per_sample.tolist()})


def _remove(X, y, drop):
    keep = np.setdiff1d(np.arange(len(y)), drop)
    return LabeledMatrix(X[keep], y[keep])


def edited_nearest_neighbours(data, k=3):
    """Remove majority rows whose k-NN majority vote disagrees with their label.

    Votes are taken once against the input; a tied vote keeps the row.
    """
    X, y = _coerce(data)
    if len(y) <= k:
        raise ValueError(f"ENN needs more than k={k} rows, got {len(y)}")
    protected = minority_label(y)
    nn = NeighborModel(k).fit(X).kneighbors(return_distance=False)
    disagree = (y[nn] != y[:, None]).sum(axis=1) * 2 > k
    drop = np.flatnonzero(disagree & (y != protected))
    out = _remove(X, y, drop)
    return out, ResampleReport("enn", _counts(y), _counts(out.y), removed=tuple(drop.tolist()),
                               params={"k": int(k)})


def find_tomek_links(X, y):
    """Sorted ``(i, j)`` pairs, i < j, of mutually nearest cross-class points."""
    nn = NeighborModel(1).fit(X).kneighbors(return_distance=False)[:, 0]
    i = np.arange(len(y))
    mutual = (nn[nn] == i) & (y[nn] != y) & (i < nn)
    return [(int(a), int(nn[a])) for a in np.flatnonzero(mutual)]


def tomek_links(data, remove="majority"):
    """Find Tomek links and delete their majority member (or both members).

    Returns
    -------
    links : list of (int, int)
    cleaned : LabeledMatrix
    report : ResampleReport
    """
    if remove not in ("majority", "both"):
        raise ValueError("remove must be 'majority' or 'both'")
    X, y = _coerce(data)
    require_both_classes(y, "tomek_links")
    protected = minority_label(y)
    links = find_tomek_links(X, y)
    drop = set()
    for a, b in links:
        for idx in (a, b):
            if remove == "both" or y[idx] != protected:
                drop.add(idx)
    drop = np.array(sorted(drop), dtype=np.int64)
    out = _remove(X, y, drop)
    return links, out, ResampleReport("tomek", _counts(y), _counts(out.y),
                                      removed=tuple(drop.tolist()),
                                      params={"remove": remove, "links": len(links)})


def smote_enn(data, k_smote=5, k_enn=3, seed=0):
    aug, first = smote(data, k_smote, seed)
    out, second = edited_nearest_neighbours(aug, k_enn)
    return out, ResampleReport("smoteenn", first.counts_before, second.counts_after,
                               first.synthetic_range, second.removed, seed,
                               {"k_smote": k_smote, "k_enn": k_enn}, [first, second])


def smote_tomek(data, k_smote=5, seed=0, remove="majority"):
    aug, first = smote(data, k_smote, seed)
    _, out, second = tomek_links(aug, remove)
    return out, ResampleReport("smotetomek", first.counts_before, second.counts_after,
                               first.synthetic_range, second.removed, seed,
                               {"k_smote": k_smote, "remove": remove}, [first, second])


# -- estimator wrappers -----------------------------------------------------------

class _BaseSampler(BaseEstimator):
    def fit_resample(self, X, y):
        """Resample ``(X, y)``; the run's details are stored in ``report_``."""
        out, self.report_ = self._resample(LabeledMatrix(*check_labeled(X, y)))
        return out.X, out.y

    def fit(self, X, y):
        self.fit_resample(X, y)
        return self


class NoResampling(_BaseSampler):
    def _resample(self, data):
        c = _counts(data.y)
        return LabeledMatrix(data.X.copy(), data.y.copy()), ResampleReport("none", c, c)


class RandomOverSampler(_BaseSampler):
    def __init__(self, random_state=0):
        self.random_state = random_state

    def _resample(self, data):
        return random_oversample(data, self.random_state)


class SMOTE(_BaseSampler):
    """Synthetic minority oversampling to full balance.

    Parameters
    ----------
    k_neighbors : int, default=5
    random_state : int, default=0
    """

    def __init__(self, k_neighbors=5, random_state=0):
        self.k_neighbors = k_neighbors
        self.random_state = random_state

    def _resample(self, data):
        return smote(data, self.k_neighbors, self.random_state)


class ADASYN(_BaseSampler):
    def __init__(self, n_neighbors=5, beta=1.0, random_state=0):
        self.n_neighbors = n_neighbors
        self.beta = beta
        self.random_state = random_state

    def _resample(self, data):
        return adasyn(data, self.n_neighbors, self.beta, self.random_state)


class EditedNearestNeighbours(_BaseSampler):
    def __init__(self, n_neighbors=3):
        self.n_neighbors = n_neighbors

    def _resample(self, data):
        return edited_nearest_neighbours(data, self.n_neighbors)


class TomekLinks(_BaseSampler):
    def __init__(self, remove="majority"):
        self.remove = remove

    def _resample(self, data):
        links, out, report = tomek_links(data, self.remove)
        self.links_ = links
        return out, report


class SMOTEENN(_BaseSampler):
    def __init__(self, k_neighbors=5, enn_neighbors=3, random_state=0):
        self.k_neighbors = k_neighbors
        self.enn_neighbors = enn_neighbors
        self.random_state = random_state

    def _resample(self, data):
        return smote_enn(data, self.k_neighbors, self.enn_neighbors, self.random_state)


class SMOTETomek(_BaseSampler):
    def __init__(self, k_neighbors=5, remove="majority", random_state=0):
        self.k_neighbors = k_neighbors
        self.remove = remove
        self.random_state = random_state

    def _resample(self, data):
        return smote_tomek(data, self.k_neighbors, self.random_state, self.remove)


RESAMPLERS = {
    "none": NoResampling,
    "ros": RandomOverSampler,
    "smote": SMOTE,
    "adasyn": ADASYN,
    "smoteenn": SMOTEENN,
    "smotetomek": SMOTETomek,
}

#: The five methods compared in the experiment grid, in table order.
DEFAULT_RESAMPLERS = ("ros", "smote", "adasyn", "smoteenn", "smotetomek")


def make_resampler(name, seed=0, **params):
    try:
        cls = RESAMPLERS[name]
    except KeyError:
        raise ValueError(f"unknown resampler {name!r}; choose from {sorted(RESAMPLERS)}") from None
    if "random_state" in cls().get_params():
        params.setdefault("random_state", seed)
    return cls(**params)
