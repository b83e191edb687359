"""Confusion-matrix metrics and one-vs-rest ROC / PR curves.

Scalar rates are evaluated as exact fractions and rounded once to float, so
they compare bit-for-bit against hand-computed ratios. ROC area is likewise
accumulated in integer counts before the final division.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .autograd import Tensor
from .errors import InputError, UndefinedCurveError

RATE_NAMES = ("sensitivity", "precision", "specificity", "f1")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted class
    class_names: list

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def one_vs_rest(self, k: int) -> tuple[int, int, int, int]:
        """``(TP, FP, FN, TN)`` treating class ``k`` as positive."""
        c = self.counts
        tp = int(c[k, k])
        fp = int(c[:, k].sum()) - tp
        fn = int(c[k, :].sum()) - tp
        tn = self.total - tp - fp - fn
        return tp, fp, fn, tn


def confusion(true_labels: Sequence[int], pred_labels: Sequence[int], K: int, class_names=None) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    p = np.asarray(pred_labels, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise InputError(f"{len(t)} true labels vs {len(p)} predictions")
    if len(t) and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= K):
        raise InputError(f"labels must lie in [0, {K})")
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    names = list(class_names) if class_names is not None else [str(k) for k in range(K)]
    return ConfusionMatrix(counts, names)


def _ratio(num: int, den: int, flag: str, flags: list) -> Fraction:
    if den == 0:
        flags.append(flag)
        return Fraction(0)
    return Fraction(num, den)


def exact_rates(cm: ConfusionMatrix) -> tuple[dict, list]:
    """Per-class rates as :class:`Fraction` plus zero-denominator flags."""
    flags: list = []
    per_class = {}
    for k, name in enumerate(cm.class_names):
        tp, fp, fn, tn = cm.one_vs_rest(k)
        per_class[name] = {
            "sensitivity": _ratio(tp, tp + fn, f"sensitivity[{name}]", flags),
            "precision": _ratio(tp, tp + fp, f"precision[{name}]", flags),
            "specificity": _ratio(tn, tn + fp, f"specificity[{name}]", flags),
            # harmonic mean of precision and recall, 2PR/(P+R) == 2TP/(2TP+FP+FN)
            "f1": _ratio(2 * tp, 2 * tp + fp + fn, f"f1[{name}]", flags),
        }
    return per_class, flags


@dataclass
class EvalReport:
    class_names: list
    confusion: list
    accuracy_percent: float
    per_class: dict
    macro: dict
    n_samples: int
    flags: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "n_samples": self.n_samples,
            "accuracy_percent": self.accuracy_percent,
            "confusion": self.confusion,
            "per_class": self.per_class,
            "macro": self.macro,
            "flags": list(self.flags),
        }


def scalar_metrics(cm: ConfusionMatrix) -> EvalReport:
    """Accuracy (percent) and per-class / macro one-vs-rest rates."""
    total = cm.total
    if total == 0:
        raise InputError("confusion matrix is empty")
    accuracy = Fraction(100 * int(np.trace(cm.counts)), total)
    per_class, flags = exact_rates(cm)
    macro = {
        name: float(sum((r[name] for r in per_class.values()), Fraction(0)) / len(per_class))
        for name in RATE_NAMES
    }
    return EvalReport(
        class_names=list(cm.class_names),
        confusion=cm.counts.tolist(),
        accuracy_percent=float(accuracy),
        per_class={k: {n: float(v) for n, v in rates.items()} for k, rates in per_class.items()},
        macro=macro,
        n_samples=total,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# curves


@dataclass
class Curve:
    points: list  # (x, y) pairs, first point is the anchor
    thresholds: list  # threshold per point; +inf for the anchor
    auc: float


def _sweep(scores, positives):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    pos = np.asarray(positives, dtype=bool).reshape(-1)
    if s.shape != pos.shape:
        raise InputError(f"{len(s)} scores vs {len(pos)} labels")
    if not np.all(np.isfinite(s)):
        raise InputError("scores must be finite")
    order = np.argsort(-s, kind="stable")
    s, pos = s[order], pos[order]
    # last index of each tie group of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(pos)[ends]
    fp = np.cumsum(~pos)[ends]
    return s[ends], tp.astype(np.int64), fp.astype(np.int64)


def roc_curve(scores, positives) -> Curve:
    """ROC points (FPR, TPR) swept over distinct scores, plus trapezoid AUC.

    Equal scores form one threshold step, which makes the area equal to the
    Mann-Whitney statistic with half credit for ties.
    """
    thr, tp, fp = _sweep(scores, positives)
    P, N = int(tp[-1]), int(fp[-1])
    if P == 0 or N == 0:
        raise UndefinedCurveError("ROC needs at least one positive and one negative")
    tp_all = np.r_[0, tp]
    fp_all = np.r_[0, fp]
    twice_area = int(np.sum((fp_all[1:] - fp_all[:-1]) * (tp_all[1:] + tp_all[:-1])))
    points = [(f / N, t / P) for f, t in zip(fp_all.tolist(), tp_all.tolist())]
    return Curve(points, [float("inf")] + thr.tolist(), twice_area / (2 * P * N))


def pr_curve(scores, positives) -> Curve:
    """PR points (recall, precision) over distinct score thresholds.

    The first point sits at recall 0 with the precision of the top score
    group. The area is the step integral sum((R_k - R_{k-1}) * P_k), i.e.
    precision held constant over each recall increment.
    """
    thr, tp, fp = _sweep(scores, positives)
    P = int(tp[-1])
    if P == 0:
        raise UndefinedCurveError("PR curve needs at least one positive")
    precision = [Fraction(int(t), int(t + f)) for t, f in zip(tp, fp)]
    recall = [Fraction(int(t), P) for t in tp]
    area = Fraction(0)
    prev_r = Fraction(0)
    for r, p in zip(recall, precision):
        area += (r - prev_r) * p
        prev_r = r
    points = [(0.0, float(precision[0]))] + [(float(r), float(p)) for r, p in zip(recall, precision)]
    return Curve(points, [float("inf")] + thr.tolist(), float(area))


@dataclass
class MulticlassCurves:
    roc: dict  # class name -> Curve
    pr: dict
    macro_roc_auc: Optional[float]
    macro_pr_auc: Optional[float]
    flags: list = field(default_factory=list)


def multiclass_curves(probs, true_labels, class_names=None, simplex_tol: float = 1e-5) -> MulticlassCurves:
    """One-vs-rest curves per class using column ``k`` of ``probs`` as the score."""
    if isinstance(probs, Tensor):
        probs = probs.data
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise InputError(f"probs must be [B, K], got shape {probs.shape}")
    B, K = probs.shape
    labels = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != B:
        raise InputError(f"{B} probability rows vs {labels.shape[0]} labels")
    if np.any(probs < -simplex_tol) or np.any(np.abs(probs.sum(axis=1) - 1.0) > simplex_tol):
        raise InputError("probability rows must lie on the simplex")
    names = list(class_names) if class_names is not None else [str(k) for k in range(K)]
    roc, pr, flags = {}, {}, []
    for k, name in enumerate(names):
        pos = labels == k
        if not pos.any():
            flags.append(f"class_absent[{name}]")
            continue
        pr[name] = pr_curve(probs[:, k], pos)
        if pos.all():
            flags.append(f"roc_undefined[{name}]")
            continue
        roc[name] = roc_curve(probs[:, k], pos)
    macro_roc = float(np.mean([c.auc for c in roc.values()])) if roc else None
    macro_pr = float(np.mean([c.auc for c in pr.values()])) if pr else None
    return MulticlassCurves(roc, pr, macro_roc, macro_pr, flags)


def evaluate(probs, true_labels, class_names) -> EvalReport:
    """Full report: confusion matrix of argmax predictions, rates and curves."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(true_labels, dtype=np.int64)
    cm = confusion(labels, probs.argmax(axis=1), len(class_names), class_names)
    report = scalar_metrics(cm)
    curves = multiclass_curves(probs, labels, class_names)
    for name in class_names:
        rates = report.per_class[name]
        rates["roc_auc"] = curves.roc[name].auc if name in curves.roc else None
        rates["pr_auc"] = curves.pr[name].auc if name in curves.pr else None
    report.macro["roc_auc"] = curves.macro_roc_auc
    report.macro["pr_auc"] = curves.macro_pr_auc
    report.flags.extend(curves.flags)
    report.curves = {"roc": curves.roc, "pr": curves.pr}
    return report


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["class_names", "n_samples", "accuracy_percent", "confusion", "per_class", "macro", "flags"],
    "properties": {
        "class_names": {"type": "array", "items": {"type": "string"}},
        "n_samples": {"type": "integer", "minimum": 0},
        "accuracy_percent": {"type": "number", "minimum": 0, "maximum": 100},
        "confusion": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
        "per_class": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["sensitivity", "precision", "specificity", "f1", "roc_auc", "pr_auc"],
                "properties": {
                    k: {"type": ["number", "null"], "minimum": 0, "maximum": 1}
                    for k in ("sensitivity", "precision", "specificity", "f1", "roc_auc", "pr_auc")
                },
            },
        },
        "macro": {
            "type": "object",
            "required": ["sensitivity", "precision", "specificity", "f1", "roc_auc", "pr_auc"],
            "properties": {
                k: {"type": ["number", "null"], "minimum": 0, "maximum": 1}
                for k in ("sensitivity", "precision", "specificity", "f1", "roc_auc", "pr_auc")
            },
        },
        "flags": {"type": "array", "items": {"type": "string"}},
    },
}
