"""Longitudinal tables in long and short (wide) format, and preparation rules.

The wide layout is feature-major: for ``F`` features and ``W`` waves the
columns are ``f1_w1 .. f1_wW, f2_w1 .. f2_wW, ...``. Keeping each feature's
waves adjacent is what lets a width-``W``/stride-``W`` convolution see one
feature's trajectory per output position.

Missing cells are carried as masked entries of a ``numpy.ma.MaskedArray``;
no numeric sentinel is ever used.
"""

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_random_state_int

logger = logging.getLogger(__name__)

#: Donor wave for each wave in a five-wave panel.
WAVE_DONORS = {1: 2, 2: 1, 3: 4, 4: 5, 5: 4}


class DuplicateRecordError(ValueError):
    pass


class UnsupportedLayoutError(ValueError):
    pass


class LabeledMatrix(NamedTuple):
    """Dense design matrix with binary labels (1 = event/minority)."""

    X: np.ndarray
    y: np.ndarray


def _frozen(arr):
    arr.flags.writeable = False
    return arr


def _as_masked(values):
    out = np.ma.array(values, dtype=np.float64, copy=True)
    out.mask = np.ma.getmaskarray(out).copy()
    out.data[out.mask] = 0.0
    return out


@dataclass(frozen=True)
class LongTable:
    """One row per (participant, wave) record."""

    pids: tuple
    waves: np.ndarray
    feature_names: tuple
    values: np.ma.MaskedArray
    target: dict = field(default_factory=dict)

    def __post_init__(self):
        waves = _frozen(np.asarray(self.waves, dtype=np.int64).copy())
        values = _as_masked(self.values)
        if values.ndim != 2 or values.shape != (len(self.pids), len(self.feature_names)):
            raise ValueError(
                f"values shape {values.shape} does not match "
                f"{len(self.pids)} records x {len(self.feature_names)} features")
        if waves.shape != (len(self.pids),):
            raise ValueError("one wave number per record is required")
        object.__setattr__(self, "pids", tuple(self.pids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "waves", waves)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "target", dict(self.target))

    @classmethod
    def from_records(cls, records, target=None):
        """Build from ``(pid, wave, {feature: value or None})`` triples."""
        records = list(records)
        if not records:
            raise ValueError("no records")
        names = tuple(records[0][2])
        pids, waves = [], []
        data = np.zeros((len(records), len(names)))
        mask = np.zeros_like(data, dtype=bool)
        for r, (pid, wave, feats) in enumerate(records):
            if tuple(feats) != names and set(feats) != set(names):
                raise ValueError(f"record {(pid, wave)} has a different feature set")
            pids.append(pid)
            waves.append(int(wave))
            for j, name in enumerate(names):
                v = feats[name]
                if v is None:
                    mask[r, j] = True
                else:
                    data[r, j] = float(v)
        return cls(pids, waves, names, np.ma.array(data, mask=mask), target or {})

    def records(self):
        for r, pid in enumerate(self.pids):
            row = self.values[r]
            feats = {name: (None if row.mask[j] else float(row.data[j]))
                     for j, name in enumerate(self.feature_names)}
            yield pid, int(self.waves[r]), feats

    def __len__(self):
        return len(self.pids)


@dataclass(frozen=True)
class WaveTable:
    """Short-format panel: one row per participant, feature-major wave blocks."""

    participant_ids: tuple
    feature_names: tuple
    wave_count: int
    values: np.ma.MaskedArray
    target: Optional[np.ndarray] = None

    def __post_init__(self):
        values = _as_masked(self.values)
        n = len(self.participant_ids)
        F, W = len(self.feature_names), int(self.wave_count)
        if W < 1:
            raise ValueError("wave_count must be >= 1")
        if values.ndim != 2 or values.shape != (n, F * W):
            raise ValueError(
                f"values shape {values.shape} != ({n}, {F}*{W}) for "
                f"{F} features over {W} waves")
        target = self.target
        if target is not None:
            target = np.asarray(target, dtype=np.int64).copy()
            if target.shape != (n,):
                raise ValueError(f"target length {target.shape} != n={n}")
            if not np.isin(target, (0, 1)).all():
                raise ValueError("target must be 0/1")
            target = _frozen(target)
        data = np.ma.getdata(values).copy()
        mask = np.ma.getmaskarray(values).copy()
        data.flags.writeable = False
        mask.flags.writeable = False
        values = np.ma.array(data, mask=mask, copy=False)
        object.__setattr__(self, "participant_ids", tuple(self.participant_ids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "wave_count", W)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "target", target)

    @property
    def n(self):
        return len(self.participant_ids)

    @property
    def columns(self):
        return [f"{f}_w{w}" for f in self.feature_names
                for w in range(1, self.wave_count + 1)]

    def column_index(self, feature, wave):
        f = self.feature_names.index(feature)
        if not 1 <= wave <= self.wave_count:
            raise ValueError(f"wave {wave} outside 1..{self.wave_count}")
        return f * self.wave_count + (wave - 1)

    def feature_columns(self, feature):
        start = self.feature_names.index(feature) * self.wave_count
        return list(range(start, start + self.wave_count))

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return WaveTable(
            [self.participant_ids[i] for i in rows], self.feature_names,
            self.wave_count, self.values[rows],
            None if self.target is None else self.target[rows])

    def missing_count(self):
        return int(np.ma.getmaskarray(self.values).sum())

    def to_labeled(self):
        """Dense ``(X, y)``; the table must be complete and labeled."""
        if self.target is None:
            raise ValueError("table has no target")
        if self.missing_count():
            raise ValueError(f"table still has {self.missing_count()} missing cells")
        return LabeledMatrix(np.array(self.values.data, dtype=np.float64),
                             self.target.copy())


@dataclass(frozen=True)
class SplitResult:
    train: WaveTable
    holdout: WaveTable
    seed: int
    train_rows: np.ndarray = None
    holdout_rows: np.ndarray = None


def pivot_long_to_wide(long, wave_count):
    """Pivot long records to short format.

    Participants without exactly ``wave_count`` records are dropped.

    Returns
    -------
    table : WaveTable
    dropped_count : int
        Number of participants removed for incomplete wave coverage.
    """
    W = int(wave_count)
    if W < 1:
        raise ValueError("wave_count must be >= 1")
    bad = (long.waves < 1) | (long.waves > W)
    if bad.any():
        r = int(np.flatnonzero(bad)[0])
        raise ValueError(f"record {(long.pids[r], int(long.waves[r]))} has wave outside 1..{W}")

    order, slots = [], {}
    for r, (pid, wave) in enumerate(zip(long.pids, long.waves.tolist())):
        per = slots.get(pid)
        if per is None:
            per = slots[pid] = {}
            order.append(pid)
        if wave in per:
            raise DuplicateRecordError(f"duplicate record for (participant, wave) = {(pid, wave)}")
        per[wave] = r

    keep = [pid for pid in order if len(slots[pid]) == W]
    dropped = len(order) - len(keep)
    F = len(long.feature_names)
    # record index for each (participant, wave); columns then gathered feature-major
    rec = np.array([[slots[pid][w] for w in range(1, W + 1)] for pid in keep],
                   dtype=np.int64).reshape(len(keep), W)
    data = long.values.data[rec]                       # (n, W, F)
    mask = np.ma.getmaskarray(long.values)[rec]
    data = data.transpose(0, 2, 1).reshape(len(keep), F * W)
    mask = mask.transpose(0, 2, 1).reshape(len(keep), F * W)

    target = None
    if keep and all(pid in long.target for pid in keep):
        target = np.array([long.target[pid] for pid in keep], dtype=np.int64)
    if dropped:
        logger.info("dropped %d participants without %d waves", dropped, W)
    return WaveTable(keep, long.feature_names, W, np.ma.array(data, mask=mask), target), dropped


def wide_to_long(table):
    """Expand a WaveTable back into long records (inverse of the pivot)."""
    n, F, W = table.n, len(table.feature_names), table.wave_count
    data = table.values.data.reshape(n, F, W).transpose(0, 2, 1).reshape(n * W, F)
    mask = np.ma.getmaskarray(table.values).reshape(n, F, W).transpose(0, 2, 1).reshape(n * W, F)
    pids = [pid for pid in table.participant_ids for _ in range(W)]
    waves = np.tile(np.arange(1, W + 1), n)
    target = {} if table.target is None else dict(zip(table.participant_ids, table.target.tolist()))
    return LongTable(pids, waves, table.feature_names, np.ma.array(data, mask=mask), target)


def filter_features_by_missingness(table, wave=1, threshold=0.03):
    """Keep features whose missing fraction at ``wave`` is strictly below ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    if not 1 <= wave <= table.wave_count:
        raise ValueError(f"wave {wave} outside 1..{table.wave_count}")
    W = table.wave_count
    mask = np.ma.getmaskarray(table.values)
    keep = []
    for f, name in enumerate(table.feature_names):
        frac = mask[:, f * W + wave - 1].mean() if table.n else 0.0
        if frac < threshold:
            keep.append(f)
    cols = [f * W + w for f in keep for w in range(W)]
    return WaveTable(table.participant_ids, [table.feature_names[f] for f in keep],
                     W, table.values[:, cols], table.target)


def impute_adjacent_waves(table):
    """Fill each missing cell from its neighbouring wave in one pass.

    Donors are read from the original values, so the result does not depend
    on the order in which cells are visited. A cell whose donor is also
    missing stays missing.

    Returns
    -------
    table : WaveTable
    remaining_missing : int
    """
    W = table.wave_count
    if W != 5:
        raise UnsupportedLayoutError(f"adjacent-wave imputation needs 5 waves, got {W}")
    n, F = table.n, len(table.feature_names)
    data = np.array(table.values.data).reshape(n, F, W)
    mask = np.ma.getmaskarray(table.values).reshape(n, F, W)
    new_data, new_mask = data.copy(), mask.copy()
    for wave, donor in WAVE_DONORS.items():
        fill = mask[:, :, wave - 1] & ~mask[:, :, donor - 1]
        new_data[:, :, wave - 1][fill] = data[:, :, donor - 1][fill]
        new_mask[:, :, wave - 1][fill] = False
    remaining = int(new_mask.sum())
    out = np.ma.array(new_data.reshape(n, F * W), mask=new_mask.reshape(n, F * W))
    return WaveTable(table.participant_ids, table.feature_names, W, out, table.target), remaining


def drop_incomplete_rows(table):
    """Remove participants that still have a missing cell; returns (table, dropped)."""
    incomplete = np.ma.getmaskarray(table.values).any(axis=1)
    return table.take(np.flatnonzero(~incomplete)), int(incomplete.sum())


def _round_half_up(x):
    return int(math.floor(x + 0.5 + 1e-9))


def stratified_indices(y, train_fraction, seed):
    """Seeded per-class partition of row indices.

    Each class contributes ``round_half_up(count * train_fraction)`` rows to
    the train side. If the class totals then miss ``round_half_up(n *
    train_fraction)`` the class with the largest rounding loss gains a row
    (or the one with the largest rounding gain gives one up).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    seed = check_random_state_int(seed)
    y = np.asarray(y, dtype=np.int64)
    counts = np.bincount(y, minlength=2)
    for c in (0, 1):
        if counts[c] == 0:
            raise ValueError(f"class {c} has no members; cannot stratify")
    exact = counts * train_fraction
    take = np.array([_round_half_up(v) for v in exact])
    diff = _round_half_up(len(y) * train_fraction) - int(take.sum())
    residual = exact - take
    while diff != 0:
        if diff > 0:
            cands = [c for c in (0, 1) if take[c] < counts[c]]
            c = max(cands, key=lambda c: (residual[c], -c))
            take[c] += 1
        else:
            cands = [c for c in (0, 1) if take[c] > 0]
            c = min(cands, key=lambda c: (residual[c], c))
            take[c] -= 1
        residual = exact - take
        diff = _round_half_up(len(y) * train_fraction) - int(take.sum())

    rng = np.random.default_rng(seed)
    train = []
    for c in (0, 1):
        members = np.flatnonzero(y == c)
        train.append(members[rng.permutation(len(members))[:take[c]]])
    train = np.sort(np.concatenate(train))
    holdout = np.setdiff1d(np.arange(len(y)), train)
    return train, holdout


def stratified_split(table, train_fraction=0.8, seed=0):
    """Stratified train/holdout partition of a labeled WaveTable."""
    if table.target is None:
        raise ValueError("stratified_split needs a target")
    train, holdout = stratified_indices(table.target, train_fraction, seed)
    return SplitResult(table.take(train), table.take(holdout), int(seed), train, holdout)


@dataclass(frozen=True)
class NormalizationStats:
    columns: tuple
    mean: np.ndarray
    std: np.ndarray
    constant_columns: tuple

    @property
    def has_constant(self):
        return bool(self.constant_columns)

    def to_dict(self):
        return {"columns": list(self.columns), "mean": self.mean.tolist(),
                "std": self.std.tolist(), "constant_columns": list(self.constant_columns)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["columns"]), np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["std"], dtype=np.float64), tuple(d["constant_columns"]))


class ZScoreScaler(TransformerMixin, BaseEstimator):
    """Standardise selected columns with population statistics.

    Parameters
    ----------
    columns : list of int or None, default=None
        Column indices to standardise; ``None`` means every column. Other
        columns pass through unchanged.

    Attributes
    ----------
    mean_ : ndarray of shape (n_selected,)
    scale_ : ndarray of shape (n_selected,)
        Population standard deviation (``ddof=0``).
    constant_ : ndarray of bool
        Selected columns with zero spread; these are mapped to 0.
    """

    def __init__(self, columns=None):
        self.columns = columns

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        cols = np.arange(X.shape[1]) if self.columns is None else np.asarray(self.columns, dtype=np.int64)
        if cols.size and (cols.min() < 0 or cols.max() >= X.shape[1]):
            raise IndexError(f"column index out of range for {X.shape[1]} columns")
        self.columns_ = cols
        self.mean_ = X[:, cols].mean(axis=0)
        self.scale_ = X[:, cols].std(axis=0)
        self.constant_ = self.scale_ == 0.0
        self.n_features_in_ = X.shape[1]
        if self.constant_.any():
            warnings.warn(f"constant columns {cols[self.constant_].tolist()} mapped to 0",
                          RuntimeWarning, stacklevel=2)
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64, copy=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        safe = np.where(self.constant_, 1.0, self.scale_)
        Z = (X[:, self.columns_] - self.mean_) / safe
        Z[:, self.constant_] = 0.0
        X[:, self.columns_] = Z
        return X

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64, copy=True)
        X[:, self.columns_] = X[:, self.columns_] * self.scale_ + self.mean_
        return X

    def stats(self):
        check_is_fitted(self, "mean_")
        return NormalizationStats(tuple(self.columns_.tolist()), self.mean_.copy(), self.scale_.copy(),
                                  tuple(self.columns_[self.constant_].tolist()))

    @classmethod
    def from_stats(cls, stats, n_features):
        scaler = cls(columns=list(stats.columns))
        scaler.columns_ = np.asarray(stats.columns, dtype=np.int64)
        scaler.mean_ = np.asarray(stats.mean, dtype=np.float64)
        scaler.scale_ = np.asarray(stats.std, dtype=np.float64)
        scaler.constant_ = np.isin(scaler.columns_, stats.constant_columns)
        scaler.n_features_in_ = int(n_features)
        return scaler


def zscore_normalize(train, columns, others=()):
    """Fit z-scoring on ``train`` only and apply the same transform to ``others``.

    Returns ``(train', others', stats)`` where the labeled matrices keep their
    labels and ``stats`` records the train mean/std used everywhere.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        scaler = ZScoreScaler(columns=list(columns)).fit(train.X)
    out_train = LabeledMatrix(scaler.transform(train.X), train.y.copy())
    out_others = [LabeledMatrix(scaler.transform(o.X), o.y.copy()) for o in others]
    return out_train, out_others, scaler.stats()


# -- CSV ---------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v)


def _parse(cell):
    cell = cell.strip()
    return None if cell == "" else float(cell)


def _parse_label(cell, where):
    cell = cell.strip()
    if cell in ("0", "1", "0.0", "1.0"):
        return int(float(cell))
    raise ValueError(f"{where}: target must be 0 or 1, got {cell!r}")


def write_long_csv(long, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pid", "wave", *long.feature_names, "y"])
        for pid, wave, feats in long.records():
            y = long.target.get(pid)
            w.writerow([pid, wave, *(_fmt(feats[f]) for f in long.feature_names),
                        "" if y is None else int(y)])


def read_long_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["pid", "wave"]:
            raise ValueError(f"{path}: long format must start with pid,wave")
        has_y = header[-1] == "y"
        names = header[2:-1] if has_y else header[2:]
        pids, waves, rows, mask, target = [], [], [], [], {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            pids.append(row[0])
            waves.append(int(row[1]))
            vals = [_parse(c) for c in row[2:2 + len(names)]]
            rows.append([0.0 if v is None else v for v in vals])
            mask.append([v is None for v in vals])
            if has_y and row[-1].strip() != "":
                target[row[0]] = _parse_label(row[-1], f"{path}:{lineno}")
    values = np.ma.array(np.array(rows, dtype=np.float64).reshape(len(rows), len(names)),
                         mask=np.array(mask, dtype=bool).reshape(len(rows), len(names)))
    return LongTable(pids, waves, names, values, target)


def write_wide_csv(table, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pid", *table.columns, *(["y"] if table.target is not None else [])])
        mask = np.ma.getmaskarray(table.values)
        for i, pid in enumerate(table.participant_ids):
            cells = [_fmt(None if mask[i, j] else table.values.data[i, j])
                     for j in range(table.values.shape[1])]
            if table.target is not None:
                cells.append(int(table.target[i]))
            w.writerow([pid, *cells])


def _parse_wide_header(cols):
    names, waves = [], []
    for c in cols:
        base, sep, k = c.rpartition("_w")
        if not sep or not k.isdigit():
            raise ValueError(f"wide column {c!r} is not <feature>_w<k>")
        names.append(base)
        waves.append(int(k))
    features = list(dict.fromkeys(names))
    W = len(cols) // max(len(features), 1)
    expected = [f"{f}_w{w}" for f in features for w in range(1, W + 1)]
    if list(cols) != expected:
        raise ValueError("wide columns must be feature-major with ascending waves")
    return features, W


def read_wide_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "pid":
            raise ValueError(f"{path}: wide format must start with pid")
        has_y = header[-1] == "y"
        cols = header[1:-1] if has_y else header[1:]
        features, W = _parse_wide_header(cols)
        pids, rows, mask, target = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            pids.append(row[0])
            vals = [_parse(c) for c in row[1:1 + len(cols)]]
            rows.append([0.0 if v is None else v for v in vals])
            mask.append([v is None for v in vals])
            if has_y:
                target.append(_parse_label(row[-1], f"{path}:{lineno}"))
    shape = (len(rows), len(cols))
    values = np.ma.array(np.array(rows, dtype=np.float64).reshape(shape),
                         mask=np.array(mask, dtype=bool).reshape(shape))
    return WaveTable(pids, features, W, values, np.array(target) if has_y else None)
