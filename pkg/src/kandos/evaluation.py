"""Detection metrics: confusion matrix, ROC/PR curves, threshold sweep, feature correlation.

Prediction rule everywhere: ``score >= threshold`` is a positive (attack).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from kandos.errors import ConfigError, DataError, ShapeError

# bands used when summarising feature/label correlations
STRONG_R = 0.5
MODERATE_R = 0.3


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int
    fp: int
    fn: int
    tp: int

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    def percentages(self) -> dict:
        """Each cell as a fraction of its true class, so each row sums to 1."""
        neg, pos = self.tn + self.fp, self.fn + self.tp
        return {
            "tn": self.tn / neg if neg else 0.0,
            "fp": self.fp / neg if neg else 0.0,
            "fn": self.fn / pos if pos else 0.0,
            "tp": self.tp / pos if pos else 0.0,
        }


@dataclass(frozen=True)
class ScalarMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    fpr: float
    fnr: float
    undefined: tuple = ()  # names of ratios whose denominator was zero (reported as 0)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d


@dataclass
class Curve:
    x: np.ndarray
    y: np.ndarray
    thresholds: np.ndarray
    x_name: str
    y_name: str

    def to_tsv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(["threshold", self.x_name, self.y_name])
        for t, x, y in zip(self.thresholds, self.x, self.y):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])
        return buf.getvalue()


@dataclass
class ThresholdSweep:
    thresholds: np.ndarray
    metrics: list  # ScalarMetrics per threshold
    best_threshold: float
    best_f1: float
    best_accuracy: float
    best_accuracy_threshold: float

    def f1_min_over(self, lo: float, hi: float) -> float:
        sel = [m.f1 for t, m in zip(self.thresholds, self.metrics) if lo <= t <= hi]
        return min(sel) if sel else float("nan")

    def summary(self) -> dict:
        return {
            "grid_size": int(len(self.thresholds)),
            "best_threshold": float(self.best_threshold),
            "best_f1": float(self.best_f1),
            "best_accuracy": float(self.best_accuracy),
            "best_accuracy_threshold": float(self.best_accuracy_threshold),
            "min_f1_0.2_to_0.8": float(self.f1_min_over(0.2, 0.8)),
        }

    def to_tsv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(["threshold", "accuracy", "precision", "recall", "f1", "fpr", "fnr"])
        for t, m in zip(self.thresholds, self.metrics):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in (m.accuracy, m.precision, m.recall, m.f1, m.fpr, m.fnr)])
        return buf.getvalue()


@dataclass
class CorrelationRow:
    feature: str
    r: float
    constant: bool = False


@dataclass
class CorrelationTable:
    rows: list  # sorted by |r| descending, constant features last

    def bands(self) -> dict:
        usable = [abs(row.r) for row in self.rows if not row.constant]
        return {
            "strong": sum(a > STRONG_R for a in usable),
            "moderate": sum(MODERATE_R < a <= STRONG_R for a in usable),
            "weak": sum(a <= MODERATE_R for a in usable),
            "constant": sum(row.constant for row in self.rows),
        }

    def rank_of(self, feature: str) -> Optional[int]:
        for i, row in enumerate(self.rows):
            if row.feature == feature:
                return i
        return None

    def to_tsv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(["rank", "feature", "pearson_r", "abs_r", "constant"])
        for i, row in enumerate(self.rows, start=1):
            w.writerow([i, row.feature, f"{row.r:.6f}", f"{abs(row.r):.6f}", int(row.constant)])
        return buf.getvalue()


def _vectors(labels, scores):
    y = np.asarray(labels).astype(np.int64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise ShapeError(f"labels ({y.shape[0]}) and scores ({s.shape[0]}) differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0/1")
    return y, s


def confusion(labels, scores, threshold: float) -> ConfusionMatrix:
    y, s = _vectors(labels, scores)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return ConfusionMatrix(tn=len(y) - tp - fp - fn, fp=fp, fn=fn, tp=tp)


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def scalar_metrics(cm: ConfusionMatrix) -> ScalarMetrics:
    if cm.total <= 0:
        raise DataError("confusion matrix is empty")
    undefined: list = []
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", undefined)
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall", undefined)
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        undefined.append("f1")
        f1 = 0.0
    return ScalarMetrics(
        accuracy=(cm.tn + cm.tp) / cm.total,
        precision=precision,
        recall=recall,
        f1=f1,
        fpr=_ratio(cm.fp, cm.fp + cm.tn, "fpr", undefined),
        fnr=_ratio(cm.fn, cm.fn + cm.tp, "fnr", undefined),
        undefined=tuple(undefined),
    )


def _ranked_counts(y, s):
    """Cumulative (tp, fp) after admitting every distinct score, highest first."""
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s_sorted)), len(s_sorted) - 1]
    tps = np.cumsum(y_sorted)[last_of_group]
    fps = (last_of_group + 1) - tps
    return s_sorted[last_of_group], tps, fps


def roc_auc(labels, scores) -> tuple[Curve, float]:
    y, s = _vectors(labels, scores)
    n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs both classes present")
    thr, tps, fps = _ranked_counts(y, s)
    tps = np.r_[0, tps]
    fps = np.r_[0, fps]
    # exact integer trapezoid sum, normalised once
    area2 = int(np.sum((fps[1:] - fps[:-1]) * (tps[1:] + tps[:-1])))
    auc = area2 / (2.0 * n_pos * n_neg)
    curve = Curve(fps / n_neg, tps / n_pos, np.r_[np.inf, thr], "fpr", "tpr")
    return curve, auc


def pr_ap(labels, scores) -> tuple[Curve, float]:
    """Precision-recall points over distinct thresholds and step-wise average precision."""
    y, s = _vectors(labels, scores)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DataError("average precision needs at least one positive")
    thr, tps, fps = _ranked_counts(y, s)
    precision = tps / (tps + fps)
    recall = tps / n_pos
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return Curve(recall, precision, thr, "recall", "precision"), ap


def threshold_grid(step: float) -> np.ndarray:
    if not 0.0 < step < 1.0:
        raise ConfigError(f"sweep step must lie in (0, 1), got {step}")
    n = round(1.0 / step)
    if abs(n * step - 1.0) < 1e-9:
        return np.arange(1, n) / n
    grid = np.arange(1, math.ceil(1.0 / step) + 1) * step
    return grid[grid < 1.0]


def threshold_sweep(labels, scores, step: float = 0.001) -> ThresholdSweep:
    y, s = _vectors(labels, scores)
    grid = threshold_grid(step)
    pos_scores = np.sort(s[y == 1])
    neg_scores = np.sort(s[y == 0])
    # count of scores >= t for each t
    tp = len(pos_scores) - np.searchsorted(pos_scores, grid, side="left")
    fp = len(neg_scores) - np.searchsorted(neg_scores, grid, side="left")
    metrics = [
        scalar_metrics(ConfusionMatrix(tn=len(neg_scores) - int(f), fp=int(f), fn=len(pos_scores) - int(t), tp=int(t)))
        for t, f in zip(tp, fp)
    ]
    f1 = np.array([m.f1 for m in metrics])
    acc = np.array([m.accuracy for m in metrics])
    i_f1 = int(np.argmax(f1))  # first maximum = smallest threshold
    i_acc = int(np.argmax(acc))
    return ThresholdSweep(grid, metrics, float(grid[i_f1]), float(f1[i_f1]), float(acc[i_acc]), float(grid[i_acc]))


def pearson_with_label(X: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    """Pearson r of every column with the 0/1 label; constant columns give r = 0 and a flag."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.shape[0] < 2:
        raise DataError("correlation needs at least two rows")
    yc = y - y.mean()
    if not np.any(yc != 0):
        raise DataError("labels are constant; correlation undefined")
    Xc = X - X.mean(axis=0)
    sx = np.sqrt(np.sum(Xc * Xc, axis=0))
    sy = math.sqrt(float(yc @ yc))
    constant = sx <= 1e-12 * np.maximum(np.abs(X).max(axis=0), 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (Xc.T @ yc) / (sx * sy)
    r = np.where(constant, 0.0, np.clip(r, -1.0, 1.0))
    return r, constant


def feature_correlation(ds) -> CorrelationTable:
    """Rank features by |Pearson r| with the label. Missing cells must already be imputed."""
    X = ds.features
    if np.isnan(X).any():
        raise DataError("impute missing values before computing correlations")
    r, constant = pearson_with_label(X, ds.labels)
    rows = [CorrelationRow(name, float(ri), bool(c)) for name, ri, c in zip(ds.feature_names, r, constant)]
    rows.sort(key=lambda row: (row.constant, -abs(row.r)))
    return CorrelationTable(rows)


@dataclass
class EvalReport:
    threshold: float
    confusion: ConfusionMatrix
    metrics: ScalarMetrics
    auc: float
    ap: float
    sweep: Optional[ThresholdSweep] = None
    correlation: Optional[CorrelationTable] = None
    resources: list = field(default_factory=list)
    context: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        cm = self.confusion
        d = {
            "context": self.context,
            "threshold": self.threshold,
            "confusion_matrix": {
                "counts": {"tn": cm.tn, "fp": cm.fp, "fn": cm.fn, "tp": cm.tp},
                "percentages": cm.percentages(),
                "total": cm.total,
            },
            "metrics": self.metrics.as_dict(),
            "auc": self.auc,
            "ap": self.ap,
        }
        if self.sweep is not None:
            d["threshold_sweep"] = self.sweep.summary()
        if self.correlation is not None:
            d["correlation"] = {
                "bands": self.correlation.bands(),
                "ranked": [{"feature": r.feature, "r": r.r, "constant": r.constant} for r in self.correlation.rows],
            }
        if self.resources:
            d["resources"] = [r.to_dict() for r in self.resources]
        return d


def evaluate_scores(labels, scores, threshold: float = 0.5, step: float = 0.001) -> EvalReport:
    cm = confusion(labels, scores, threshold)
    _, auc = roc_auc(labels, scores)
    _, ap = pr_ap(labels, scores)
    return EvalReport(threshold, cm, scalar_metrics(cm), auc, ap, threshold_sweep(labels, scores, step))
