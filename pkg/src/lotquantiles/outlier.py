"""Depth-threshold outlier detection, DD-plot export and ROC analysis.

Thresholds come from a calibration set disjoint from the training images.
For level ``alpha`` and ``n`` calibration depths sorted nonincreasingly, the
threshold is the depth at 1-based position ``ceil((1 - alpha) n)``, so that
``floor(alpha n)`` calibration depths fall strictly below it when depths are
distinct. An image is an outlier when either of its depths falls strictly
below the corresponding threshold.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .depths import DepthReport, Pipeline, depth_report, inner_depth, outer_depth
from .errors import DomainError

SCORE_METHODS = ("inner", "outer", "min-quantile")
DD_COLUMNS = ("id", "inner", "outer", "is_outlier", "label")
ROC_COLUMNS = ("fpr", "tpr", "threshold")


@dataclass(frozen=True, eq=False)
class OutlierModel:
    pipeline: Pipeline | None
    inner_threshold: float
    outer_threshold: float
    alpha: float
    calibration_inner: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    calibration_outer: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


@dataclass(frozen=True)
class Verdict:
    is_outlier: bool
    inner: float
    outer: float


def threshold(depths, alpha: float) -> float:
    """Depth at position ``ceil((1 - alpha) n)`` of the nonincreasing order."""
    depths = np.asarray(depths, dtype=np.float64)
    n = depths.size
    if n == 0:
        raise DomainError("calibration set is empty")
    if not 0.0 <= alpha < 1.0:
        raise DomainError("alpha must lie in [0, 1)")
    ordered = np.sort(depths)[::-1]
    below = math.floor(alpha * n + 1e-9)
    if below < 1:
        warnings.warn(f"alpha * n = {alpha * n:.3g} < 1: threshold set to the minimum calibration depth",
                      stacklevel=2)
        return float(ordered[-1])
    # ceil((1 - alpha) n) == n - floor(alpha n), without rounding trouble.
    return float(ordered[n - below - 1])


def calibrate_depths(inner, outer, alpha: float, pipeline: Pipeline | None = None) -> OutlierModel:
    inner = np.asarray(inner, dtype=np.float64)
    outer = np.asarray(outer, dtype=np.float64)
    if inner.shape != outer.shape:
        raise DomainError("inner and outer calibration depths differ in length")
    return OutlierModel(pipeline, threshold(inner, alpha), threshold(outer, alpha), alpha,
                        np.sort(inner), np.sort(outer))


def calibrate(calibration, pipeline: Pipeline, alpha: float = 0.05, n_jobs: int | None = None) -> OutlierModel:
    """Thresholds from the depths of calibration images (never the training set)."""
    report = depth_report(calibration, pipeline, n_jobs=n_jobs)
    return calibrate_depths(report.values("inner"), report.values("outer"), alpha, pipeline)


def is_outlier(inner, outer, model: OutlierModel):
    """OR rule: flagged when either depth is strictly below its threshold."""
    inner = np.asarray(inner, dtype=np.float64)
    outer = np.asarray(outer, dtype=np.float64)
    return (inner < model.inner_threshold) | (outer < model.outer_threshold)


def classify(image, model: OutlierModel) -> Verdict:
    if model.pipeline is None:
        raise DomainError("model has no pipeline to embed images")
    di = inner_depth(image, model.pipeline)
    do = outer_depth(image, model.pipeline)
    return Verdict(bool(is_outlier(di, do, model)), di, do)


def calibration_pvalue(depths, calibration_sorted: np.ndarray) -> np.ndarray:
    """``(1 + #{calibration depth <= x}) / (n + 1)``; small means outlying."""
    counts = np.searchsorted(calibration_sorted, np.asarray(depths, dtype=np.float64), side="right")
    return (1.0 + counts) / (calibration_sorted.size + 1.0)


def outlier_score(inner, outer, model: OutlierModel, method: str = "min-quantile") -> np.ndarray:
    """Score where lower means more outlying.

    ``inner`` / ``outer`` use the raw depth; ``min-quantile`` takes the
    smaller of the two calibration p-values.
    """
    if method == "inner":
        return np.asarray(inner, dtype=np.float64)
    if method == "outer":
        return np.asarray(outer, dtype=np.float64)
    if method == "min-quantile":
        if model.calibration_inner.size == 0:
            raise DomainError("min-quantile scores need calibration depths")
        return np.minimum(calibration_pvalue(inner, model.calibration_inner),
                          calibration_pvalue(outer, model.calibration_outer))
    raise DomainError(f"unknown score method {method!r}")


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def roc_auc(scores, is_true_outlier) -> tuple[RocCurve, float]:
    """ROC of the rule ``score <= t`` swept over all distinct scores, and its AUC.

    Tied scores enter the curve together, so the trapezoidal area equals
    ``P(outlier score < inlier score) + P(tie) / 2``.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(is_true_outlier, dtype=bool)
    if s.shape != y.shape:
        raise DomainError("one label per score is required")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DomainError("ROC needs both outliers and inliers")
    order = np.argsort(s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[-np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds), auc


def _fmt(x) -> str:
    return repr(float(x))


def dd_plot_export(report: DepthReport, model: OutlierModel, path, labels=None) -> None:
    """DD-plot CSV: a ``#`` comment row with both thresholds, then one row per image."""
    flags = is_outlier(report.values("inner"), report.values("outer"), model)
    if labels is not None and len(labels) != len(report):
        raise DomainError("one label per image is required")
    with open(path, "w", newline="") as fh:
        fh.write(f"# inner_threshold={_fmt(model.inner_threshold)},"
                 f"outer_threshold={_fmt(model.outer_threshold)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DD_COLUMNS)
        for k, r in enumerate(report.records):
            label = "" if labels is None else str(labels[k])
            w.writerow([r.id, _fmt(r.inner), _fmt(r.outer), int(flags[k]), label])


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROC_COLUMNS)
        for f, t, th in zip(curve.fpr, curve.tpr, curve.thresholds):
            w.writerow([_fmt(f), _fmt(t), _fmt(th)])


def write_report_json(path, model: OutlierModel, auc: float | None = None, method: str | None = None,
                      verdicts=None) -> None:
    doc = {"alpha": model.alpha, "inner_threshold": model.inner_threshold,
           "outer_threshold": model.outer_threshold}
    if auc is not None:
        doc["auc"] = auc
        doc["score_method"] = method
    if verdicts is not None:
        doc["verdicts"] = [{"id": i, "is_outlier": bool(v.is_outlier), "inner": v.inner, "outer": v.outer}
                           for i, v in verdicts]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
