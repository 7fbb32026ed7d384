"""Command-line driver.

    wavecnn generate --out DIR
    wavecnn prepare  --input cohort_long.csv --out DIR
    wavecnn split    --input prepared_wide.csv --out DIR
    wavecnn resample --input train.csv --method smote --out DIR
    wavecnn train    --train train_resampled.csv --val val.csv --out DIR
    wavecnn evaluate --checkpoint DIR/checkpoint.npz --input test.csv --split test --out DIR
    wavecnn roc      --input scores.csv --split test --out DIR
    wavecnn run      --out DIR
    wavecnn sweep    --out DIR

Exit status: 0 on success, 1 when a stage fails, 2 on a configuration error.
"""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .cohort import generate_cohort
from .data import (NormalizationStats, WaveTable, ZScoreScaler, read_long_csv, read_wide_csv,
                   write_long_csv, write_wide_csv, zscore_normalize)
from .estimator import load_checkpoint, save_checkpoint
from .experiment import (ConfigError, ExperimentConfig, StageError, atomic_write_text, feature_column_indices,
                         history_csv, full_grid, prepare_long, prepare_wide, run_pipeline, run_sweep,
                         three_way_split, DEFAULT_ACTIVATIONS)
from .metrics import auc, evaluate, roc_curve, roc_svg, write_roc_csv
from .network import bce_loss, predict_proba, train, wave_cnn_spec
from .resampling import DEFAULT_RESAMPLERS, make_resampler

logger = logging.getLogger("wavecnn")


def _emit(args, payload, rows=None):
    """Print a result summary on stdout in the requested format."""
    if args.format == "csv":
        rows = rows if rows is not None else [payload]
        w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    else:
        print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def _write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")


def _labeled(table):
    return table.to_labeled()


def cmd_generate(args, cfg):
    cohort = cfg.cohort if args.seed is None else replace(cfg.cohort, seed=args.seed)
    long, truth = generate_cohort(replace(cohort, n_waves=cfg.n_waves))
    path = os.path.join(args.out, "cohort_long.csv")
    write_long_csv(long, path)
    truth.write_json(os.path.join(args.out, "ground_truth.json"))
    _emit(args, {"long_csv": path, "records": len(long), "positives": truth.positives,
                 "oracle_auc": truth.oracle_auc})


def cmd_prepare(args, cfg):
    with open(args.input, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if len(header) > 1 and header[1] == "wave":
        table, report = prepare_long(read_long_csv(args.input), cfg.n_waves,
                                     cfg.missing_wave, cfg.missing_threshold)
    else:
        table, report = prepare_wide(read_wide_csv(args.input), cfg.missing_wave, cfg.missing_threshold)
    path = os.path.join(args.out, "prepared_wide.csv")
    write_wide_csv(table, path)
    _write_json(os.path.join(args.out, "prepare_report.json"), report)
    _emit(args, {"wide_csv": path, **report})


def cmd_split(args, cfg):
    table = read_wide_csv(args.input)
    parts = three_way_split(table, cfg.split_fractions, cfg.effective_data_seed)
    summary = {}
    for name, part in zip(("train", "val", "test"), parts):
        write_wide_csv(part, os.path.join(args.out, f"{name}.csv"))
        summary[name] = {"n": part.n, "positives": int(part.target.sum())}
    _write_json(os.path.join(args.out, "split_report.json"), summary)
    _emit(args, summary)


def cmd_resample(args, cfg):
    table = read_wide_csv(args.input)
    data = _labeled(table)
    method = args.method or cfg.resampler
    sampler = make_resampler(method, seed=cfg.seed, **cfg.resampler_params)
    X, y = sampler.fit_resample(data.X, data.y)
    report = sampler.report_
    # removal indices refer to the rows after any oversampling phase
    pids = list(table.participant_ids) + [f"SYN{i + 1:06d}" for i in range(report.n_synthetic)]
    removed = set(report.removed)
    pids = [p for i, p in enumerate(pids) if i not in removed]
    out = WaveTable(pids, table.feature_names, table.wave_count, np.ma.array(X), y)
    write_wide_csv(out, os.path.join(args.out, "train_resampled.csv"))
    _write_json(os.path.join(args.out, "resample_report.json"), report.to_dict())
    _emit(args, {"method": method, "counts_before": list(report.counts_before),
                 "counts_after": list(report.counts_after), "removed": len(removed),
                 "synthetic": report.n_synthetic})


def cmd_train(args, cfg):
    train_t = read_wide_csv(args.train)
    val_t = read_wide_csv(args.val)
    cols = feature_column_indices(train_t, cfg.normalize_features)
    train_n, (val_n,), stats = zscore_normalize(_labeled(train_t), cols, [_labeled(val_t)])
    spec = wave_cnn_spec(len(train_t.feature_names), train_t.wave_count, cfg.activation)
    params, history = train(spec, train_n, val_n, cfg.train_config())
    save_checkpoint(os.path.join(args.out, "checkpoint.npz"), spec, params, seed=cfg.seed, history=history,
                    extra={"normalization": stats.to_dict(), "config": cfg.to_dict()})
    atomic_write_text(os.path.join(args.out, "history.csv"), history_csv(history))
    _write_json(os.path.join(args.out, "normalization.json"), stats.to_dict())
    best = history.rows[history.best_epoch - 1]
    _emit(args, {"best_epoch": history.best_epoch, "stopped_epoch": history.stopped_epoch,
                 "val_loss": best["val_loss"], "val_auc": best["val_auc"]})


def _write_roc(out, split, curve, title):
    write_roc_csv(curve, os.path.join(out, f"roc_{split}.csv"))
    atomic_write_text(os.path.join(out, f"roc_{split}.svg"), roc_svg({split: curve}, title))


def cmd_evaluate(args, cfg):
    ckpt = load_checkpoint(args.checkpoint)
    table = read_wide_csv(args.input)
    data = _labeled(table)
    norm = ckpt["extra"].get("normalization")
    X = data.X
    if norm:
        X = ZScoreScaler.from_stats(NormalizationStats.from_dict(norm), X.shape[1]).transform(X)
    probs = predict_proba(ckpt["spec"], ckpt["params"], X)
    report = evaluate(probs, data.y, args.split, bce_loss)
    atomic_write_text(os.path.join(args.out, f"metrics_{args.split}.json"), report.to_json() + "\n")
    if np.unique(data.y).size == 2:
        _write_roc(args.out, args.split, roc_curve(probs, data.y), f"ROC ({args.split})")
    _emit(args, report.to_dict())


def cmd_roc(args, cfg):
    with open(args.input, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    y = np.array([int(float(r["y"])) for r in rows])
    scores = np.array([float(r["score"]) for r in rows])
    curve = roc_curve(scores, y)
    _write_roc(args.out, args.split, curve, f"ROC ({args.split})")
    _emit(args, {"split": args.split, "points": len(curve), "auc": auc(curve)})


def cmd_run(args, cfg):
    result = run_pipeline(cfg, out_dir=args.out)
    rows = [result.val_report.to_dict(), result.test_report.to_dict()]
    _emit(args, {"val": rows[0], "test": rows[1]}, rows)


def cmd_sweep(args, cfg):
    resamplers = args.resamplers.split(",") if args.resamplers else DEFAULT_RESAMPLERS
    activations = args.activations.split(",") if args.activations else DEFAULT_ACTIVATIONS
    try:
        grid = full_grid(cfg, resamplers, activations)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sweep = run_sweep(grid, out_dir=args.out, jobs=args.jobs)
    if args.format == "csv":
        sys.stdout.write(sweep.to_csv())
    else:
        sys.stdout.write(sweep.table("val") + "\n" + sweep.table("test"))
    if sweep.failures:
        logger.error("%d sweep cells failed", len(sweep.failures))


COMMANDS = {
    "generate": cmd_generate, "prepare": cmd_prepare, "split": cmd_split,
    "resample": cmd_resample, "train": cmd_train, "evaluate": cmd_evaluate,
    "roc": cmd_roc, "run": cmd_run, "sweep": cmd_sweep,
}


def _global_flags(suppress):
    """Global flags; accepted before or after the subcommand."""
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=d(None), help="JSON experiment config")
    common.add_argument("--seed", type=int, default=d(None), help="master seed (overrides config)")
    common.add_argument("--out", default=d("."), help="output directory")
    common.add_argument("--format", choices=("json", "csv"), default=d("json"),
                        help="stdout summary format")
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser():
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="wavecnn", description=__doc__.split("\n")[0],
                                     parents=[_global_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic long-format cohort")
    p = sub.add_parser("prepare", parents=[common], help="pivot, filter, impute")
    p.add_argument("--input", required=True)
    p = sub.add_parser("split", parents=[common], help="stratified train/val/test split")
    p.add_argument("--input", required=True)
    p = sub.add_parser("resample", parents=[common], help="resample the training split")
    p.add_argument("--input", required=True)
    p.add_argument("--method", help="none, ros, smote, adasyn, smoteenn, smotetomek")
    p = sub.add_parser("train", parents=[common], help="normalise and train with early stopping")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p = sub.add_parser("evaluate", parents=[common], help="score a split with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--split", default="test")
    p = sub.add_parser("roc", parents=[common], help="ROC curve from a y,score CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--split", default="test")
    sub.add_parser("run", parents=[common], help="full pipeline for one configuration")
    p = sub.add_parser("sweep", parents=[common], help="resampler x activation grid")
    p.add_argument("--resamplers", help="comma-separated subset")
    p.add_argument("--activations", help="comma-separated subset")
    p.add_argument("--jobs", type=int, default=1)
    return parser


def load_config(args):
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = replace(cfg, seed=args.seed)
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        os.makedirs(args.out, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, FloatingPointError, KeyError, OSError) as exc:
        print(f"error: stage '{args.command}' failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
