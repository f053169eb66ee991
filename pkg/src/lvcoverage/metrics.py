"""Classification metrics: precision, sensitivity, error rate, Cohen's kappa.

Undefined values (zero denominators, degenerate tables) raise
:class:`~lvcoverage.errors.UndefinedMetric` instead of silently becoming 0 or
1. "Positive" for the MBS/MAS tasks means the defect is present.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, UndefinedMetric


def precision(tp: int, fp: int) -> float:
    if tp + fp == 0:
        raise UndefinedMetric("precision undefined: no positive predictions")
    return tp / (tp + fp)


def sensitivity(tp: int, fn: int) -> float:
    if tp + fn == 0:
        raise UndefinedMetric("sensitivity undefined: no positive references")
    return tp / (tp + fn)


def error_rate(fp: int, fn: int, n: int) -> float:
    if n <= 0:
        raise UndefinedMetric("error rate undefined: empty test set")
    return (fp + fn) / n


@dataclass
class ConfusionMatrix:
    """Square count table; rows are the reference, columns the prediction."""

    labels: tuple
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        self.labels = tuple(self.labels)
        k = len(self.labels)
        if self.counts is None:
            self.counts = np.zeros((k, k), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (k, k):
                raise DimensionError(
                    f"counts shape {self.counts.shape} != ({k}, {k})")
            if (self.counts < 0).any():
                raise DimensionError("confusion counts must be non-negative")

    @classmethod
    def from_pairs(cls, reference, prediction, labels) -> "ConfusionMatrix":
        cm = cls(labels)
        index = {lab: i for i, lab in enumerate(cm.labels)}
        for ref, pred in zip(reference, prediction):
            cm.counts[index[ref], index[pred]] += 1
        return cm

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_correct_ratio(self, label) -> float:
        i = self.labels.index(label)
        row = self.counts[i].sum()
        if row == 0:
            raise UndefinedMetric(f"no reference samples labelled {label!r}")
        return float(self.counts[i, i]) / float(row)

    def transposed(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.labels, self.counts.T.copy())

    def text(self) -> str:
        head = "\t".join(("ref\\pred",) + tuple(str(l) for l in self.labels))
        lines = [head]
        for i, lab in enumerate(self.labels):
            lines.append("\t".join([str(lab)] + [str(int(c)) for c in self.counts[i]]))
        return "\n".join(lines) + "\n"


def cohens_kappa(matrix: ConfusionMatrix) -> float:
    """Chance-corrected agreement: (p_o - p_e) / (1 - p_e)."""
    total = matrix.total
    if total == 0:
        raise UndefinedMetric("kappa undefined on an empty table")
    counts = matrix.counts.astype(np.float64)
    p_o = np.trace(counts) / total
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    p_e = float((rows * cols).sum()) / (total * total)
    if p_e == 1.0:
        raise UndefinedMetric("kappa undefined: single-category table")
    return (p_o - p_e) / (1.0 - p_e)


@dataclass
class BinaryTaskCounts:
    """TP/FP/FN/TN bookkeeping for one defect-detection task."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @classmethod
    def from_pairs(cls, reference, prediction) -> "BinaryTaskCounts":
        c = cls()
        for ref, pred in zip(reference, prediction):
            if ref and pred:
                c.tp += 1
            elif not ref and pred:
                c.fp += 1
            elif ref and not pred:
                c.fn += 1
            else:
                c.tn += 1
        return c

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def summary(self) -> dict:
        return {
            "error_rate": error_rate(self.fp, self.fn, self.n),
            "precision": precision(self.tp, self.fp),
            "sensitivity": sensitivity(self.tp, self.fn),
        }


def metrics_table(per_task: dict) -> str:
    """Tab-separated report: task, error %, precision %, sensitivity %.

    Undefined cells (e.g. precision with no positive predictions) render as
    ``n/a`` — the undefined-metric signal is shown, never a silent 0 or 1.
    """
    lines = ["task\terror\tprecision\tsensitivity"]
    for task, counts in per_task.items():
        cells = [task]
        for fn in (lambda: error_rate(counts.fp, counts.fn, counts.n),
                   lambda: precision(counts.tp, counts.fp),
                   lambda: sensitivity(counts.tp, counts.fn)):
            try:
                cells.append(f"{100 * fn():.2f}%")
            except UndefinedMetric:
                cells.append("n/a")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
