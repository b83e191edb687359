import json
from fractions import Fraction

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import average_precision, pairwise_auc
from resbrnet.errors import InputError, UndefinedCurveError
from resbrnet.metrics import (
    REPORT_SCHEMA,
    ConfusionMatrix,
    confusion,
    evaluate,
    multiclass_curves,
    pr_curve,
    roc_curve,
    scalar_metrics,
)


def binary_cm(tp, fn, fp, tn):
    return ConfusionMatrix(np.array([[tp, fn], [fp, tn]]), ["pos", "neg"])


class TestConfusion:
    def test_perfect(self):
        cm = confusion([0, 1, 2, 2], [0, 1, 2, 2], 3)
        np.testing.assert_array_equal(cm.counts, np.diag([1, 1, 2]))

    def test_antidiagonal(self):
        np.testing.assert_array_equal(confusion([0, 1], [1, 0], 2).counts, [[0, 1], [1, 0]])

    def test_row_sums(self):
        rng = np.random.default_rng(0)
        t, p = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
        np.testing.assert_array_equal(confusion(t, p, 4).counts.sum(axis=1), np.bincount(t, minlength=4))

    def test_bad_input(self):
        with pytest.raises(InputError):
            confusion([0, 1], [0], 2)
        with pytest.raises(InputError):
            confusion([0, 2], [0, 1], 2)


class TestScalarMetrics:
    def test_binary_example(self):
        r = scalar_metrics(binary_cm(tp=90, fn=10, fp=5, tn=95))
        pos = r.per_class["pos"]
        assert r.accuracy_percent == 92.5
        assert pos["sensitivity"] == 0.9
        assert pos["precision"] == pytest.approx(0.9474, abs=1e-4)
        assert pos["f1"] == pytest.approx(0.9231, abs=1e-4)
        assert pos["specificity"] == 0.95

    def test_f1_from_reported_rates(self):
        p, r = 0.9822, 0.9811
        assert 2 * p * r / (p + r) == pytest.approx(0.98165, abs=1e-5)

    def test_perfect(self):
        r = scalar_metrics(confusion([0, 1, 2, 3] * 3, [0, 1, 2, 3] * 3, 4))
        assert r.accuracy_percent == 100.0
        assert all(v == 1.0 for rates in r.per_class.values() for v in rates.values())
        assert all(v == 1.0 for v in r.macro.values())

    def test_zero_denominator_flagged(self):
        r = scalar_metrics(confusion([0, 0], [0, 0], 2))
        assert r.per_class["1"]["sensitivity"] == 0.0
        assert "sensitivity[1]" in r.flags and "precision[1]" in r.flags

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=1, max_size=60), st.integers(0, 1000))
    def test_micro_sensitivity_is_accuracy(self, labels, seed):
        pred = np.random.default_rng(seed).integers(0, 4, len(labels))
        cm = confusion(labels, pred, 4)
        tp = sum(cm.one_vs_rest(k)[0] for k in range(4))
        fn = sum(cm.one_vs_rest(k)[2] for k in range(4))
        assert Fraction(100 * tp, tp + fn) == Fraction(100 * int(np.trace(cm.counts)), cm.total)
        assert scalar_metrics(cm).accuracy_percent == float(Fraction(100 * tp, tp + fn))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 100), st.integers(0, 100), st.integers(0, 100))
    def test_f1_between_precision_and_recall(self, tp, fp, fn):
        r = scalar_metrics(binary_cm(tp, fn, fp, 5)).per_class["pos"]
        assert min(r["precision"], r["sensitivity"]) - 1e-15 <= r["f1"] <= max(r["precision"], r["sensitivity"]) + 1e-15
        hm = 2 * r["precision"] * r["sensitivity"] / (r["precision"] + r["sensitivity"])
        assert r["f1"] == pytest.approx(hm, rel=1e-12)

    def test_empty(self):
        with pytest.raises(InputError):
            scalar_metrics(confusion([], [], 3))


class TestRoc:
    def test_perfect(self):
        assert roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]).auc == 1.0

    def test_all_equal(self):
        assert roc_curve([0.5] * 6, [1, 0, 1, 0, 0, 0]).auc == 0.5

    def test_hand_example(self):
        scores, pos = [0.9, 0.8, 0.7, 0.6], [True, False, True, False]
        assert roc_curve(scores, pos).auc == 0.75 == float(pairwise_auc(scores, pos))

    def test_points_and_thresholds(self):
        c = roc_curve([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
        assert c.points[0] == (0.0, 0.0) and c.points[-1] == (1.0, 1.0)
        assert c.thresholds == [float("inf"), 0.9, 0.8, 0.7, 0.6]
        xs = [p[0] for p in c.points]
        assert xs == sorted(xs)

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=12))
    def test_monotone_transform_invariance(self, data):
        scores, pos = zip(*data)
        if all(pos) or not any(pos):
            return
        s = np.array(scores, dtype=float)
        base = roc_curve(s, pos).auc
        assert roc_curve(np.exp(s / 3), pos).auc == base
        assert roc_curve(3 * s - 7, pos).auc == base

    def test_undefined(self):
        with pytest.raises(UndefinedCurveError):
            roc_curve([0.1, 0.2], [1, 1])

    def test_non_finite(self):
        with pytest.raises(InputError):
            roc_curve([0.1, np.nan], [1, 0])


class TestPr:
    def test_perfect(self):
        assert pr_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]).auc == 1.0

    def test_all_equal(self):
        assert pr_curve([0.3] * 8, [1, 1, 1, 0, 0, 0, 0, 0]).auc == 3 / 8

    def test_hand_example(self):
        scores, pos = [0.9, 0.8, 0.7, 0.6], [True, False, True, False]
        c = pr_curve(scores, pos)
        assert c.auc == pytest.approx(0.8333, abs=1e-4)
        assert c.auc == float(average_precision(scores, pos))

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=1, max_size=12))
    def test_against_threshold_enumeration(self, data):
        scores, pos = zip(*data)
        if not any(pos):
            return
        assert pr_curve(scores, pos).auc == float(average_precision(scores, pos))

    def test_no_positives(self):
        with pytest.raises(UndefinedCurveError):
            pr_curve([0.1, 0.2], [0, 0])


class TestMulticlass:
    labels = np.array([0, 1, 2, 3, 0, 1, 2, 3])

    def test_one_hot(self):
        curves = multiclass_curves(np.eye(4)[self.labels], self.labels)
        assert all(c.auc == 1.0 for c in curves.roc.values())
        assert all(c.auc == 1.0 for c in curves.pr.values())

    def test_uniform(self):
        curves = multiclass_curves(np.full((8, 4), 0.25), self.labels)
        assert all(c.auc == 0.5 for c in curves.roc.values())

    def test_binary_symmetry(self):
        rng = np.random.default_rng(0)
        p1 = rng.random(20)
        probs = np.stack([1 - p1, p1], axis=1)
        labels = rng.integers(0, 2, 20)
        labels[:2] = [0, 1]
        curves = multiclass_curves(probs, labels)
        flipped = roc_curve(probs[:, 0], labels == 1).auc
        assert curves.roc["1"].auc == pytest.approx(1 - flipped, abs=1e-15)

    def test_absent_class_flagged(self):
        curves = multiclass_curves(np.eye(3)[[0, 1, 0, 1]], [0, 1, 0, 1])
        assert "class_absent[2]" in curves.flags and "2" not in curves.roc

    def test_rows_must_be_on_simplex(self):
        with pytest.raises(InputError):
            multiclass_curves(np.full((2, 4), 0.3), [0, 1])


def test_report_json_schema():
    rng = np.random.default_rng(1)
    probs = rng.dirichlet(np.ones(4), size=30)
    labels = np.arange(30) % 4
    report = evaluate(probs, labels, ["a", "b", "c", "d"])
    doc = json.loads(json.dumps(report.to_json()))
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert sum(map(sum, doc["confusion"])) == doc["n_samples"] == 30
    assert doc["per_class"]["a"]["roc_auc"] == roc_curve(probs[:, 0], labels == 0).auc
