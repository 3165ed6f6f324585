"""Confusion-matrix metrics with an explicit positive class.

Multi-class predictions are binarized for precision/sensitivity/F1: the
positive class stays positive, every other class collapses to negative. The
headline accuracy is exact multi-class correct/total; the binarized accuracy
(TP+TN)/N is also reported.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int
    positive_class: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ArgumentError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    accuracy: float  # multi-class correct/total
    accuracy_binary: float  # (TP+TN)/N after binarization
    precision: float
    sensitivity: float
    f1: float
    counts: ConfusionCounts
    undefined: tuple[str, ...] = ()  # metrics forced to 0 by a zero denominator
    model_size_mb: float = 0.0
    per_class_counts: list[dict] = field(default_factory=list)


def confusion(predictions, labels, positive_class: int) -> ConfusionCounts:
    """Binarized confusion counts: `positive_class` vs. everything else."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ArgumentError(
            f"predictions {predictions.shape} and labels {labels.shape} "
            "must be equal-length 1-D arrays"
        )
    if positive_class < 0:
        raise ArgumentError(f"positive_class must be nonnegative, got {positive_class}")
    pred_pos = predictions == positive_class
    true_pos = labels == positive_class
    return ConfusionCounts(
        tp=int(np.sum(pred_pos & true_pos)),
        fp=int(np.sum(pred_pos & ~true_pos)),
        tn=int(np.sum(~pred_pos & ~true_pos)),
        fn=int(np.sum(~pred_pos & true_pos)),
        positive_class=positive_class,
    )


def per_class_table(predictions, labels, num_classes: int) -> list[dict]:
    """Per-class support / predicted / correct counts."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    table = []
    for c in range(num_classes):
        table.append({
            "class": c,
            "support": int(np.sum(labels == c)),
            "predicted": int(np.sum(predictions == c)),
            "correct": int(np.sum((labels == c) & (predictions == c))),
        })
    return table


def _ratio(num: int, den: int, name: str, undefined: list[str]) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def compute_metrics(counts: ConfusionCounts, correct_multiclass: int, total: int,
                    model_size: float = 0.0, per_class=None) -> MetricsReport:
    """Precision, sensitivity and F1 from binarized counts; accuracy as exact
    multi-class correct/total. Zero-denominator ratios come back as 0 and are
    listed in `undefined`."""
    if total <= 0:
        raise ArgumentError(f"total must be positive, got {total}")
    if not 0 <= correct_multiclass <= total:
        raise ArgumentError(
            f"correct_multiclass {correct_multiclass} outside [0, {total}]"
        )
    undefined: list[str] = []
    precision = _ratio(counts.tp, counts.tp + counts.fp, "precision", undefined)
    sensitivity = _ratio(counts.tp, counts.tp + counts.fn, "sensitivity", undefined)
    if precision + sensitivity == 0.0:
        undefined.append("f1")
        f1 = 0.0
    else:
        f1 = 2.0 * precision * sensitivity / (precision + sensitivity)
    binary_total = counts.total
    accuracy_binary = (counts.tp + counts.tn) / binary_total if binary_total else 0.0
    return MetricsReport(
        accuracy=correct_multiclass / total,
        accuracy_binary=accuracy_binary,
        precision=precision,
        sensitivity=sensitivity,
        f1=f1,
        counts=counts,
        undefined=tuple(undefined),
        model_size_mb=model_size,
        per_class_counts=per_class or [],
    )


def format_report(report: MetricsReport) -> str:
    """Human-readable key: value lines, percentages with 2 decimals."""
    out = io.StringIO()
    out.write(f"accuracy: {100 * report.accuracy:.2f}%\n")
    out.write(f"accuracy_binary: {100 * report.accuracy_binary:.2f}%\n")
    out.write(f"precision: {100 * report.precision:.2f}%\n")
    out.write(f"sensitivity: {100 * report.sensitivity:.2f}%\n")
    out.write(f"f1: {100 * report.f1:.2f}%\n")
    out.write(f"model_size_mb: {report.model_size_mb:.2f}\n")
    c = report.counts
    out.write(f"positive_class: {c.positive_class}\n")
    out.write(f"tp: {c.tp}\nfp: {c.fp}\ntn: {c.tn}\nfn: {c.fn}\n")
    if report.undefined:
        out.write(f"undefined: {','.join(report.undefined)}\n")
    for row in report.per_class_counts:
        out.write(
            f"class{row['class']}: support {row['support']} "
            f"predicted {row['predicted']} correct {row['correct']}\n"
        )
    return out.getvalue()


CSV_HEADER = "accuracy,accuracy_binary,precision,sensitivity,f1,model_size_mb,tp,fp,tn,fn"


def format_csv_row(report: MetricsReport) -> str:
    c = report.counts
    return (
        f"{100 * report.accuracy:.2f},{100 * report.accuracy_binary:.2f},"
        f"{100 * report.precision:.2f},{100 * report.sensitivity:.2f},"
        f"{100 * report.f1:.2f},{report.model_size_mb:.2f},"
        f"{c.tp},{c.fp},{c.tn},{c.fn}"
    )
