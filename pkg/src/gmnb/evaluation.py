"""ROC / precision-recall curves and AUCs for a scored gene list."""
from __future__ import annotations

import statistics
from dataclasses import dataclass

import numpy as np

from .errors import StructureError


@dataclass
class CurveResult:
    points: np.ndarray      # (m, 2): (FPR, TPR) for ROC, (recall, precision) for PR
    auc: float
    n_positives: int
    n_negatives: int


def _operating_points(scores, truth):
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise StructureError("scores and truth must be vectors of equal length")
    if np.any(np.isnan(scores)):
        raise StructureError("scores contain NaN")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise StructureError("need at least one positive and one negative label")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], truth[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(~y)[ends]
    return tp, fp, n_pos, n_neg


def _trapezoid(x, y):
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def roc_curve(scores, truth) -> CurveResult:
    """ROC with tied scores collapsed into a single step."""
    tp, fp, n_pos, n_neg = _operating_points(scores, truth)
    x = np.r_[0.0, fp / n_neg]
    y = np.r_[0.0, tp / n_pos]
    return CurveResult(np.column_stack([x, y]), _trapezoid(x, y), n_pos, n_neg)


def pr_curve(scores, truth) -> CurveResult:
    """Precision-recall curve; area by trapezoid over the achievable points.

    The curve is anchored at recall 0 with the precision of the first
    operating point.
    """
    tp, fp, n_pos, n_neg = _operating_points(scores, truth)
    recall = tp / n_pos
    precision = tp / (tp + fp)
    x = np.r_[0.0, recall]
    y = np.r_[precision[0], precision]
    return CurveResult(np.column_stack([x, y]), _trapezoid(x, y), n_pos, n_neg)


def aggregate_runs(results) -> tuple[float, float]:
    """Mean and sample standard deviation of the AUCs of several runs."""
    aucs = [r.auc if isinstance(r, CurveResult) else float(r) for r in results]
    if len(aucs) < 2:
        raise StructureError("need at least two runs to aggregate")
    # statistics works in exact arithmetic, so equal AUCs give sd exactly 0
    return statistics.fmean(aucs), statistics.stdev(aucs)
