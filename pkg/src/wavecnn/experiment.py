"""End-to-end protocol: prepare -> split -> resample -> normalise -> train -> evaluate.

The data are split twice with stratification: first into a training pool
and a *validation* split, then the pool into *train* and *test*. Only the
train split is resampled. Selected features (age by default) are then
z-scored with statistics of the augmented train split, which are replayed
unchanged on validation and test. Early stopping monitors validation loss;
the kept model is reported on both held-out splits.
"""

import csv
import dataclasses
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cohort import CohortConfig, generate_cohort
from .data import (LabeledMatrix, WaveTable, drop_incomplete_rows, filter_features_by_missingness,
                   impute_adjacent_waves, pivot_long_to_wide, read_long_csv, read_wide_csv,
                   stratified_split, zscore_normalize)
from .estimator import save_checkpoint
from .metrics import evaluate, roc_curve, roc_svg, write_roc_csv
from .network import ACTIVATIONS, HISTORY_FIELDS, TrainConfig, bce_loss, predict_proba, train, wave_cnn_spec
from .resampling import DEFAULT_RESAMPLERS, RESAMPLERS, make_resampler

logger = logging.getLogger(__name__)

DEFAULT_ACTIVATIONS = ("relu", "selu", "elu", "swish", "leaky_relu")
SUMMARY_COLUMNS = ("resampler", "activation", "split", "loss", "accuracy", "auc")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage


@dataclass(frozen=True)
class ExperimentConfig:
    data_source: str = "generated"
    data_path: str = None
    cohort: CohortConfig = field(default_factory=CohortConfig)
    n_waves: int = 5
    missing_wave: int = 1
    missing_threshold: float = 0.03
    split_fractions: tuple = (0.8, 0.8)
    normalize_features: tuple = ("age",)
    resampler: str = "ros"
    resampler_params: dict = field(default_factory=dict)
    activation: str = "swish"
    learning_rate: float = 0.01
    max_epochs: int = 100
    batch_size: int = 32
    patience: int = 10
    seed: int = 0
    data_seed: int = None
    output_dir: str = None

    def __post_init__(self):
        if self.data_source not in ("generated", "csv"):
            raise ConfigError(f"data_source must be 'generated' or 'csv', got {self.data_source!r}")
        if self.data_source == "csv" and not self.data_path:
            raise ConfigError("data_source 'csv' needs data_path")
        if self.resampler not in RESAMPLERS:
            raise ConfigError(f"unknown resampler {self.resampler!r}; choose from {sorted(RESAMPLERS)}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")
        fr = tuple(float(f) for f in self.split_fractions)
        if len(fr) != 2 or not all(0.0 < f < 1.0 for f in fr):
            raise ConfigError("split_fractions must be two values in (0, 1)")
        if isinstance(self.cohort, dict):
            try:
                object.__setattr__(self, "cohort", CohortConfig.from_dict(self.cohort))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"cohort: {exc}") from exc
        object.__setattr__(self, "split_fractions", fr)
        object.__setattr__(self, "normalize_features", tuple(self.normalize_features))
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def effective_data_seed(self):
        return self.seed if self.data_seed is None else self.data_seed

    def train_config(self):
        return TrainConfig(self.learning_rate, self.max_epochs, self.batch_size, self.patience, self.seed)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["cohort"] = self.cohort.to_dict()
        d["split_fractions"] = list(self.split_fractions)
        d["normalize_features"] = list(self.normalize_features)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)


# -- stages ----------------------------------------------------------------------------

def prepare_long(long, n_waves=5, missing_wave=1, missing_threshold=0.03):
    """Pivot, drop high-missingness features, impute, drop incomplete rows."""
    table, dropped_waves = pivot_long_to_wide(long, n_waves)
    return prepare_wide(table, missing_wave, missing_threshold, dropped_participants=dropped_waves)


def prepare_wide(table, missing_wave=1, missing_threshold=0.03, dropped_participants=0):
    before = len(table.feature_names)
    table = filter_features_by_missingness(table, missing_wave, missing_threshold)
    missing_before = table.missing_count()
    table, remaining = impute_adjacent_waves(table)
    table, incomplete = drop_incomplete_rows(table)
    report = {
        "participants_dropped_incomplete_waves": int(dropped_participants),
        "features_before": before,
        "features_kept": len(table.feature_names),
        "missing_cells_before_imputation": missing_before,
        "missing_cells_after_imputation": remaining,
        "participants_dropped_residual_missing": incomplete,
        "participants": table.n,
        "positives": None if table.target is None else int(table.target.sum()),
    }
    return table, report


def load_prepared(cfg):
    """Source data for ``cfg`` after preparation; returns ``(table, report)``."""
    if cfg.data_source == "generated":
        long, truth = generate_cohort(replace(cfg.cohort, n_waves=cfg.n_waves))
        table, report = prepare_long(long, cfg.n_waves, cfg.missing_wave, cfg.missing_threshold)
        report["oracle_auc"] = truth.oracle_auc
        return table, report
    with open(cfg.data_path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if len(header) > 1 and header[1] == "wave":
        return prepare_long(read_long_csv(cfg.data_path), cfg.n_waves,
                            cfg.missing_wave, cfg.missing_threshold)
    return prepare_wide(read_wide_csv(cfg.data_path), cfg.missing_wave, cfg.missing_threshold)


def three_way_split(table, fractions, seed):
    """Stratified (train, validation, test) following the two-step protocol."""
    first = stratified_split(table, fractions[0], seed)
    second = stratified_split(first.train, fractions[1], seed + 1)
    return second.train, first.holdout, second.holdout


def feature_column_indices(table, names):
    cols = []
    for name in names:
        if name in table.feature_names:
            cols.extend(table.feature_columns(name))
        else:
            logger.warning("feature %r not present; not normalised", name)
    return cols


@dataclass
class PipelineResult:
    config: ExperimentConfig
    val_report: object
    test_report: object
    resample_report: object
    normalization: object
    history: object
    spec: object
    params: dict
    prepare_report: dict
    matrices: dict = field(default_factory=dict, repr=False)
    curves: dict = field(default_factory=dict, repr=False)

    def metrics_json(self, split):
        report = self.val_report if split == "val" else self.test_report
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, RuntimeError, FloatingPointError, KeyError, OSError) as exc:
        raise StageError(name, exc) from exc


def run_pipeline(config, prepared=None, out_dir=None):
    """Run the full protocol for one (resampler, activation) cell.

    Parameters
    ----------
    config : ExperimentConfig
    prepared : (WaveTable, dict), optional
        Output of :func:`load_prepared` to reuse across cells.
    out_dir : str, optional
        Artifact directory; defaults to ``config.output_dir``. Nothing is
        written when both are None.
    """
    cfg = config
    table, prep_report = prepared if prepared is not None else _stage("prepare", load_prepared, cfg)
    train_t, val_t, test_t = _stage("split", three_way_split, table, cfg.split_fractions,
                                    cfg.effective_data_seed)
    train_m, val_m, test_m = (_stage("split", t.to_labeled) for t in (train_t, val_t, test_t))

    sampler = make_resampler(cfg.resampler, seed=cfg.seed, **cfg.resampler_params)
    X_aug, y_aug = _stage("resample", sampler.fit_resample, train_m.X, train_m.y)
    augmented = LabeledMatrix(X_aug, y_aug)

    cols = feature_column_indices(table, cfg.normalize_features)
    train_n, (val_n, test_n), stats = _stage("normalize", zscore_normalize, augmented, cols, [val_m, test_m])

    spec = wave_cnn_spec(len(table.feature_names), table.wave_count, cfg.activation)
    params, history = _stage("train", train, spec, train_n, val_n, cfg.train_config())

    reports, curves = {}, {}
    for split, data in (("val", val_n), ("test", test_n)):
        probs = _stage("evaluate", predict_proba, spec, params, data.X)
        reports[split] = evaluate(probs, data.y, split, bce_loss)
        if np.unique(data.y).size == 2:
            curves[split] = roc_curve(probs, data.y)

    result = PipelineResult(cfg, reports["val"], reports["test"], sampler.report_, stats, history,
                            spec, params, prep_report,
                            matrices={"train": train_m, "val": val_m, "test": test_m,
                                      "train_augmented": augmented, "train_normalized": train_n,
                                      "val_normalized": val_n, "test_normalized": test_n},
                            curves=curves)
    out_dir = out_dir if out_dir is not None else cfg.output_dir
    if out_dir is not None:
        _stage("write", write_artifacts, result, out_dir)
    return result


# -- artifacts ---------------------------------------------------------------------------

def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def history_csv(history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*HISTORY_FIELDS, "best"])
    for row in history.rows:
        w.writerow([*(repr(row[k]) if isinstance(row[k], float) else row[k] for k in HISTORY_FIELDS),
                    int(row["epoch"] == history.best_epoch)])
    return buf.getvalue()


def write_artifacts(result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for split in ("val", "test"):
        atomic_write_text(os.path.join(out_dir, f"metrics_{split}.json"), result.metrics_json(split))
        curve = result.curves.get(split)
        if curve is not None:
            tmp = os.path.join(out_dir, f".roc_{split}.csv.part")
            write_roc_csv(curve, tmp)
            os.replace(tmp, os.path.join(out_dir, f"roc_{split}.csv"))
            title = f"{result.config.resampler} / {result.config.activation} ({split})"
            atomic_write_text(os.path.join(out_dir, f"roc_{split}.svg"), roc_svg({split: curve}, title))
    atomic_write_text(os.path.join(out_dir, "history.csv"), history_csv(result.history))
    atomic_write_text(os.path.join(out_dir, "resample_report.json"),
                      json.dumps(result.resample_report.to_dict(), indent=2, sort_keys=True, default=_jsonable) + "\n")
    atomic_write_text(os.path.join(out_dir, "normalization.json"),
                      json.dumps(result.normalization.to_dict(), indent=2, sort_keys=True) + "\n")
    atomic_write_text(os.path.join(out_dir, "prepare_report.json"),
                      json.dumps(result.prepare_report, indent=2, sort_keys=True) + "\n")
    atomic_write_text(os.path.join(out_dir, "config.json"),
                      json.dumps(result.config.to_dict(), indent=2, sort_keys=True) + "\n")
    save_checkpoint(os.path.join(out_dir, "checkpoint.npz"), result.spec, result.params,
                    seed=result.config.seed, history=result.history,
                    extra={"normalization": result.normalization.to_dict(),
                           "feature_count": result.spec.input_length // result.config.n_waves,
                           "config": result.config.to_dict()})


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return obj.to_dict() if hasattr(obj, "to_dict") else dataclasses.asdict(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# -- sweep -----------------------------------------------------------------------------

def full_grid(base, resamplers=DEFAULT_RESAMPLERS, activations=DEFAULT_ACTIVATIONS):
    """Resampler-major grid of configs over the given method and activation names."""
    return [replace(base, resampler=r, activation=a) for r in resamplers for a in activations]


@dataclass
class SweepResult:
    rows: list
    failures: list
    results: list = field(default_factory=list, repr=False)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for split in ("val", "test"):
            for row in self.rows:
                if row["split"] == split:
                    w.writerow([row["resampler"], row["activation"], split,
                                *(repr(float(row[k])) for k in ("loss", "accuracy", "auc"))])
        return buf.getvalue()

    def table(self, split):
        """Activation rows by resampler column groups, as plain text."""
        rows = [r for r in self.rows if r["split"] == split]
        resamplers = list(dict.fromkeys(r["resampler"] for r in rows))
        activations = list(dict.fromkeys(r["activation"] for r in rows))
        cell = {(r["resampler"], r["activation"]): r for r in rows}
        head1 = f"{'':<12}" + "".join(f"| {name:^26} " for name in resamplers)
        head2 = f"{'':<12}" + "| Loss     Accuracy AUC     " * len(resamplers)
        lines = [f"[{split}]", head1, head2]
        for a in activations:
            line = f"{a:<12}"
            for r in resamplers:
                c = cell.get((r, a))
                line += ("| " + "  ".join(f"{c[k]:.4f}" for k in ("loss", "accuracy", "auc")) + " "
                         if c else "| " + "n/a".center(25) + " ")
            lines.append(line)
        return "\n".join(lines) + "\n"


def _cell(args):
    cfg, prepared, out_dir = args
    try:
        return run_pipeline(cfg, prepared, out_dir), None
    except StageError as exc:
        return None, f"{exc}"


def run_sweep(grid, out_dir=None, jobs=1):
    """Run every config in ``grid``; cell ``i`` trains with seed ``seed + i``.

    Data generation and splitting keep each cell's original seed, so all
    cells see the same splits. A failed cell is logged and reported with
    NaN metrics instead of aborting the sweep.
    """
    if not grid:
        raise ValueError("empty grid")
    cells = [replace(cfg, data_seed=cfg.effective_data_seed, seed=cfg.seed + i)
             for i, cfg in enumerate(grid)]
    prepared_cache = {}
    jobs_args = []
    for i, cfg in enumerate(cells):
        key = json.dumps({k: v for k, v in cfg.to_dict().items()
                          if k in ("data_source", "data_path", "cohort", "n_waves",
                                   "missing_wave", "missing_threshold")}, sort_keys=True)
        if key not in prepared_cache:
            prepared_cache[key] = load_prepared(cfg)
        cell_dir = None if out_dir is None else os.path.join(out_dir, "cells", f"{i:02d}_{cfg.resampler}_{cfg.activation}")
        jobs_args.append((cfg, prepared_cache[key], cell_dir))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_cell, jobs_args))
    else:
        outcomes = [_cell(a) for a in jobs_args]

    rows, failures, results = [], [], []
    for (cfg, _, _), (res, err) in zip(jobs_args, outcomes):
        results.append(res)
        if err is not None:
            logger.error("cell %s/%s failed: %s", cfg.resampler, cfg.activation, err)
            failures.append({"resampler": cfg.resampler, "activation": cfg.activation, "error": err})
        for split in ("val", "test"):
            rep = None if res is None else (res.val_report if split == "val" else res.test_report)
            rows.append({"resampler": cfg.resampler, "activation": cfg.activation, "split": split,
                         "loss": math.nan if rep is None else rep.loss,
                         "accuracy": math.nan if rep is None else rep.accuracy,
                         "auc": math.nan if rep is None else rep.auc})
    sweep = SweepResult(rows, failures, results)
    if out_dir is not None:
        write_sweep(sweep, out_dir)
    return sweep


def write_sweep(sweep, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_text(os.path.join(out_dir, "sweep_summary.csv"), sweep.to_csv())
    atomic_write_text(os.path.join(out_dir, "sweep_tables.txt"), sweep.table("val") + "\n" + sweep.table("test"))
    atomic_write_text(os.path.join(out_dir, "sweep_failures.json"), json.dumps(sweep.failures, indent=2) + "\n")
    for split in ("val", "test"):
        by_act = {}
        for res in sweep.results:
            if res is not None and split in res.curves:
                by_act.setdefault(res.config.activation, {})[res.config.resampler] = res.curves[split]
        for act, curves in by_act.items():
            atomic_write_text(os.path.join(out_dir, f"roc_{split}_{act}.svg"),
                              roc_svg(curves, f"ROC, {act} activation ({split})"))
