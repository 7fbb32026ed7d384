"""Synthetic ageing-survey cohorts with a known mortality mechanism.

Each participant has an integer age at wave 1 that rises by 2 per wave,
a block of chronic conditions that never resolve once present, and a set
of other binary items that persist from wave to wave with a fixed
probability. Death after the last wave follows a logistic model on
last-wave age and chronic-condition count; the intercept is bisected so
the realised number of deaths matches the configured prevalence.
"""

import json
import math
from dataclasses import dataclass, asdict, field

import numpy as np

from .data import LongTable
from .metrics import auc_from_scores
from ._validation import check_random_state_int


class InfeasiblePrevalenceError(ValueError):
    pass


@dataclass(frozen=True)
class CohortConfig:
    """Generative parameters for :func:`generate_cohort`.

    ``age_weight`` is the log-odds per standard deviation of last-wave age;
    ``burden_weight`` the log-odds per chronic condition present at the last
    wave.
    """

    n: int = 5314
    n_features: int = 52
    n_waves: int = 5
    prevalence: float = 0.01
    missing_rate: float = 0.01
    age_range: tuple = (50, 90)
    persistence: float = 0.95
    n_chronic: int = 12
    chronic_onset: float = 0.04
    item_prevalence: tuple = (0.05, 0.4)
    age_weight: float = 2.0
    burden_weight: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError("prevalence must lie in (0, 1)")
        if self.n * self.prevalence < 2:
            raise ValueError("n * prevalence must be at least 2")
        if self.n_features < 1 or self.n_waves < 1:
            raise ValueError("need at least one feature and one wave")
        if not 0 <= self.n_chronic <= self.n_features - 1:
            raise ValueError("n_chronic must fit after the age feature")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must lie in [0, 1)")
        if not 0.0 <= self.persistence <= 1.0:
            raise ValueError("persistence must lie in [0, 1]")
        lo, hi = self.age_range
        if lo > hi:
            raise ValueError("age_range must be (low, high)")
        check_random_state_int(self.seed)
        object.__setattr__(self, "age_range", tuple(self.age_range))
        object.__setattr__(self, "item_prevalence", tuple(self.item_prevalence))

    @property
    def feature_names(self):
        chronic = [f"chronic_{i:02d}" for i in range(1, self.n_chronic + 1)]
        items = [f"item_{i:02d}" for i in range(1, self.n_features - self.n_chronic)]
        return ["age", *chronic, *items]

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown cohort keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["age_range"] = list(self.age_range)
        d["item_prevalence"] = list(self.item_prevalence)
        return d


@dataclass
class GroundTruth:
    risk: np.ndarray
    intercept: float
    weights: dict
    chronic_features: list
    positives: int
    oracle_auc: float
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {"intercept": self.intercept, "weights": self.weights,
                "chronic_features": self.chronic_features, "positives": self.positives,
                "oracle_auc": self.oracle_auc, "config": self.config,
                "risk": self.risk.tolist()}

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def calibrate_intercept(risk, uniforms, target, lo=-40.0, hi=40.0, iters=200):
    """Bisect ``b`` so that ``sum(uniforms < sigmoid(risk + b))`` hits ``target``.

    The uniforms are held fixed, so the count is monotone in ``b``.
    Returns ``(b, count)`` with the count closest to ``target``.
    """
    def count(b):
        return int((uniforms < _sigmoid(risk + b)).sum())

    best = (lo, count(lo))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        c = count(mid)
        if abs(c - target) < abs(best[1] - target):
            best = (mid, c)
        if c == target:
            return mid, c
        if c < target:
            lo = mid
        else:
            hi = mid
    return best


def generate_cohort(config=CohortConfig()):
    """Draw a cohort; returns ``(LongTable, GroundTruth)``.

    Everything is a deterministic function of ``config.seed``.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    n, F, W = cfg.n, cfg.n_features, cfg.n_waves
    values = np.zeros((n, F, W))

    age1 = rng.integers(cfg.age_range[0], cfg.age_range[1] + 1, size=n)
    values[:, 0, :] = age1[:, None] + 2 * np.arange(W)[None, :]

    n_items = F - 1
    base = rng.uniform(*cfg.item_prevalence, size=n_items)
    state = rng.random((n, n_items)) < base
    values[:, 1:, 0] = state
    chronic = np.arange(n_items) < cfg.n_chronic
    # non-chronic items: stay with prob `persistence`, onset keeps prevalence stationary
    onset = np.where(chronic, cfg.chronic_onset,
                     np.clip(base * (1 - cfg.persistence) / (1 - base), 0.0, 1.0))
    stay = np.where(chronic, 1.0, cfg.persistence)
    for w in range(1, W):
        u = rng.random((n, n_items))
        state = np.where(state, u < stay, u < onset)
        values[:, 1:, w] = state

    last_age = values[:, 0, -1]
    spread = last_age.std()
    z_age = (last_age - last_age.mean()) / (spread if spread > 0 else 1.0)
    burden = values[:, 1:1 + cfg.n_chronic, -1].sum(axis=1)
    risk = cfg.age_weight * z_age + cfg.burden_weight * (burden - burden.mean())

    uniforms = rng.random(n)
    target = int(math.floor(cfg.prevalence * n + 0.5))
    b, positives = calibrate_intercept(risk, uniforms, target)
    if abs(positives - target) > 0.2 * target:
        raise InfeasiblePrevalenceError(
            f"could not reach {target} events (best {positives}); weaken the risk weights")
    y = (uniforms < _sigmoid(risk + b)).astype(np.int64)

    missing = rng.random((n, F, W)) < cfg.missing_rate

    pids = [f"P{i + 1:05d}" for i in range(n)]
    long_pids = [pid for pid in pids for _ in range(W)]
    waves = np.tile(np.arange(1, W + 1), n)
    flat = values.transpose(0, 2, 1).reshape(n * W, F)
    flat_mask = missing.transpose(0, 2, 1).reshape(n * W, F)
    table = LongTable(long_pids, waves, cfg.feature_names, np.ma.array(flat, mask=flat_mask),
                      dict(zip(pids, y.tolist())))

    truth = GroundTruth(
        risk=risk, intercept=float(b),
        weights={"age_per_sd": cfg.age_weight, "per_chronic_condition": cfg.burden_weight},
        chronic_features=cfg.feature_names[1:1 + cfg.n_chronic], positives=int(y.sum()),
        oracle_auc=auc_from_scores(risk, y) if 0 < y.sum() < n else math.nan,
        config=cfg.to_dict())
    return table, truth
