import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import pairwise_auc
from wavecnn.metrics import (RocCurve, accuracy, auc, auc_from_scores, evaluate, read_roc_csv, roc_curve,
                             roc_svg, write_roc_csv)
from wavecnn.network import bce_loss


class TestAccuracy:
    def test_perfect_and_inverted(self):
        assert accuracy([0.6, 0.4], [1, 0]) == 1.0
        assert accuracy([0.6, 0.4], [0, 1]) == 0.0

    def test_ties_are_positive(self):
        assert accuracy([0.5] * 4, [1, 1, 0, 0]) == 0.5
        assert accuracy([0.5] * 4, [1, 1, 1, 0]) == 0.75

    def test_custom_threshold(self):
        assert accuracy([0.3, 0.2], [1, 0], threshold=0.25) == 1.0

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            accuracy([], [])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            accuracy([0.1], [0, 1])

    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
    def test_complement(self, rows):
        p, y = map(np.array, zip(*rows))
        err = float(np.mean((p >= 0.5).astype(int) != y))
        assert accuracy(p, y) + err == pytest.approx(1.0)


class TestRoc:
    def test_perfect(self):
        c = roc_curve([0.9, 0.1], [1, 0])
        assert list(zip(c.fpr, c.tpr)) == [(0, 0), (0, 1), (1, 1)]
        assert auc(c) == 1.0

    def test_inverted(self):
        assert auc_from_scores([0.1, 0.9], [1, 0]) == 0.0

    def test_all_equal(self):
        c = roc_curve([0.3] * 6, [0, 1, 0, 1, 1, 0])
        assert list(zip(c.fpr, c.tpr)) == [(0, 0), (1, 1)]
        assert auc(c) == 0.5

    def test_hand_staircase(self):
        c = roc_curve([0.9, 0.8, 0.4, 0.35], [1, 0, 0, 1])
        assert list(zip(c.fpr.tolist(), c.tpr.tolist())) == [
            (0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (1.0, 0.5), (1.0, 1.0)]
        assert c.thresholds[0] == math.inf
        assert c.thresholds[1:].tolist() == [0.9, 0.8, 0.4, 0.35]
        assert auc(c) == 0.5
        assert pairwise_auc([0.9, 0.8, 0.4, 0.35], [1, 0, 0, 1]) == 0.5

    def test_single_class(self):
        with pytest.raises(ValueError, match="class 1"):
            roc_curve([0.2, 0.3], [0, 0])

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(2, 300), levels=st.integers(1, 10))
    def test_monotone_and_bounded(self, seed, n, levels):
        r = np.random.default_rng(seed)
        y = r.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        c = roc_curve(r.integers(0, levels, size=n) / levels, y)
        assert (c.fpr[0], c.tpr[0]) == (0, 0) and (c.fpr[-1], c.tpr[-1]) == (1, 1)
        assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(2, 200))
    def test_transform_invariance(self, seed, n):
        r = np.random.default_rng(seed)
        y = r.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        s = np.round(r.random(n), 2)
        assert auc_from_scores(s, y) == auc_from_scores(np.exp(3 * s) - 7, y)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(2, 500), levels=st.sampled_from([2, 3, 10, 10**6]))
    def test_trapezoid_equals_pairwise(self, seed, n, levels):
        r = np.random.default_rng(seed)
        y = r.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        s = r.integers(0, levels, size=n) / levels
        assert abs(auc_from_scores(s, y) - pairwise_auc(s.tolist(), y.tolist())) < 1e-12


class TestReports:
    def test_evaluate(self):
        rep = evaluate([0.9, 0.2, 0.6], [1, 0, 0], "val", bce_loss)
        assert rep.split == "val" and rep.n == 3 and rep.positives == 1
        assert rep.accuracy == pytest.approx(2 / 3) and rep.auc == 1.0
        assert '"split": "val"' in rep.to_json()

    def test_single_class_auc_is_nan(self):
        assert math.isnan(evaluate([0.1, 0.2], [0, 0], "test", bce_loss).auc)

    def test_csv_round_trip(self, tmp_path):
        c = roc_curve([0.9, 0.8, 0.4, 0.35, 0.1], [1, 0, 0, 1, 0])
        write_roc_csv(c, tmp_path / "roc.csv")
        assert (tmp_path / "roc.csv").read_text().splitlines()[0] == "fpr,tpr,threshold"
        back = read_roc_csv(tmp_path / "roc.csv")
        assert back.points == c.points

    def test_svg(self):
        c = roc_curve([0.9, 0.1, 0.4], [1, 0, 0])
        svg = roc_svg({"ros <x>": c}, title="a & b")
        assert svg.startswith("<svg") and "stroke-dasharray" in svg
        assert "AUC 1.000" in svg and "&lt;x&gt;" in svg and "a &amp; b" in svg
        assert "polyline" in roc_svg(c)
