"""Evaluation metrics: accuracy, ROC curve, AUC, and per-split reports."""

import csv
import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from ._validation import check_binary_scores, require_both_classes


def accuracy(probs, y, threshold=0.5):
    """Fraction of rows where ``probs >= threshold`` matches the label.

    A probability exactly at the threshold counts as a positive prediction.
    """
    probs, y = check_binary_scores(probs, y)
    return float(np.mean((probs >= threshold).astype(np.int64) == y))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))

    def __len__(self):
        return len(self.fpr)


def roc_curve(probs, y):
    """ROC points for every distinct score, highest threshold first.

    The first point uses an ``inf`` threshold (nothing predicted positive),
    so the curve always starts at (0, 0) and ends at (1, 1). Rows sharing a
    score enter together, which makes ties a single diagonal step.
    """
    probs, y = check_binary_scores(probs, y)
    counts = require_both_classes(y, "roc_curve")
    order = np.argsort(-probs, kind="mergesort")
    s, lab = probs[order], y[order]
    tps = np.cumsum(lab)
    fps = np.cumsum(1 - lab)
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tps = np.r_[0, tps[last_of_group]]
    fps = np.r_[0, fps[last_of_group]]
    thresholds = np.r_[np.inf, s[last_of_group]]
    return RocCurve(fps / counts[0], tps / counts[1], thresholds)


def auc(curve):
    """Trapezoidal area under a ROC curve."""
    f, t = np.asarray(curve.fpr), np.asarray(curve.tpr)
    if len(f) < 2:
        raise ValueError("a ROC curve needs at least two points")
    return float(np.sum(np.diff(f) * (t[1:] + t[:-1])) / 2.0)


def auc_from_scores(probs, y):
    return auc(roc_curve(probs, y))


@dataclass(frozen=True)
class EvalReport:
    split: str
    loss: float
    accuracy: float
    auc: float
    n: int
    positives: int

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(probs, y, split, loss_fn):
    """Build an :class:`EvalReport`; AUC is NaN if ``y`` has one class."""
    probs, y = check_binary_scores(probs, y)
    area = auc_from_scores(probs, y) if np.unique(y).size == 2 else math.nan
    return EvalReport(split, float(loss_fn(probs, y)), accuracy(probs, y), area,
                      int(len(y)), int(y.sum()))


def write_roc_csv(curve, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in curve.points:
            w.writerow([repr(f), repr(t), repr(th)])


def read_roc_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return RocCurve(np.array([float(r["fpr"]) for r in rows]),
                    np.array([float(r["tpr"]) for r in rows]),
                    np.array([float(r["threshold"]) for r in rows]))


def roc_svg(curves, title="ROC curve", size=360):
    """Self-contained SVG with one polyline per curve and the chance diagonal.

    ``curves`` maps a legend label to a :class:`RocCurve`.
    """
    if isinstance(curves, RocCurve):
        curves = {"": curves}
    pad = 40
    side = size - 2 * pad
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

    def xy(f, t):
        return f"{pad + f * side:.2f},{pad + (1 - t) * side:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{size / 2}" y="{pad / 2 + 4}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{_escape(title)}</text>',
        f'<rect x="{pad}" y="{pad}" width="{side}" height="{side}" fill="none" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad + side}" x2="{pad + side}" y2="{pad}" '
        'stroke="gray" stroke-dasharray="4 4"/>',
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-family="sans-serif" '
        'font-size="11">False positive rate</text>',
        f'<text x="12" y="{size / 2}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="11" transform="rotate(-90 12 {size / 2})">True positive rate</text>',
    ]
    for i, (label, curve) in enumerate(curves.items()):
        colour = palette[i % len(palette)]
        pts = " ".join(xy(f, t) for f, t in zip(curve.fpr, curve.tpr))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        if label:
            name = f"{label} (AUC {auc(curve):.3f})"
            parts.append(f'<text x="{pad + side - 4}" y="{pad + side - 8 - 14 * i}" text-anchor="end" '
                         f'font-family="sans-serif" font-size="10" fill="{colour}">{_escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(text):
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
