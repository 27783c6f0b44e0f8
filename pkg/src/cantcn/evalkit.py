"""Confusion counting and result tables.

accuracy = (TP+TN)/(TP+FP+TN+FN), fpr = FP/(TN+FP), precision = TP/(TP+FP).
Ratios with a zero denominator are reported as 0.0 and flagged undefined so
tables stay rectangular. Emitted tables round metrics to 4 decimals;
internal values keep full precision.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class ClassMetrics:
    counts: ConfusionCounts
    accuracy: float
    fpr: float
    precision: float
    fpr_defined: bool
    precision_defined: bool


def confusion_counts(predicted, truth) -> ConfusionCounts:
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape != truth.shape:
        raise ValueError(
            f"{predicted.shape[0]} predictions vs {truth.shape[0]} ground-truth labels"
        )
    if predicted.size == 0:
        raise ValueError("nothing to evaluate")
    tp = int(np.sum((predicted == 1) & (truth == 1)))
    tn = int(np.sum((predicted == 0) & (truth == 0)))
    fp = int(np.sum((predicted == 1) & (truth == 0)))
    fn = int(np.sum((predicted == 0) & (truth == 1)))
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def metrics_from_counts(c: ConfusionCounts) -> ClassMetrics:
    fpr_defined = (c.tn + c.fp) > 0
    precision_defined = (c.tp + c.fp) > 0
    return ClassMetrics(
        counts=c,
        accuracy=(c.tp + c.tn) / c.total,
        fpr=c.fp / (c.tn + c.fp) if fpr_defined else 0.0,
        precision=c.tp / (c.tp + c.fp) if precision_defined else 0.0,
        fpr_defined=fpr_defined,
        precision_defined=precision_defined,
    )


def evaluate(predicted, truth) -> ClassMetrics:
    """Exact confusion counting of index-aligned 0/1 label sequences."""
    return metrics_from_counts(confusion_counts(predicted, truth))


@dataclass
class MetricsReport:
    """ClassMetrics keyed by (msg_id, attack_class)."""

    cells: dict

    def __init__(self):
        self.cells = {}

    def add(self, msg_id, attack_class: str, metrics: ClassMetrics) -> None:
        self.cells[(msg_id, attack_class)] = metrics

    def rows(self) -> list:
        """Stable ordering: message ID, then attack class."""
        keys = sorted(self.cells, key=lambda k: (str(k[0]), k[1]))
        out = []
        for msg_id, attack_class in keys:
            m = self.cells[(msg_id, attack_class)]
            out.append(
                {
                    "msg_id": msg_id,
                    "attack_class": attack_class,
                    "accuracy": float(f"{m.accuracy:.4f}"),
                    "fpr": float(f"{m.fpr:.4f}"),
                    "precision": float(f"{m.precision:.4f}"),
                    "tp": m.counts.tp,
                    "tn": m.counts.tn,
                    "fp": m.counts.fp,
                    "fn": m.counts.fn,
                    "fpr_defined": m.fpr_defined,
                    "precision_defined": m.precision_defined,
                }
            )
        return out


REPORT_COLUMNS = (
    "msg_id", "attack_class", "accuracy", "fpr", "precision",
    "tp", "tn", "fp", "fn", "fpr_defined", "precision_defined",
)


def emit_report(report: MetricsReport, fmt: str = "csv") -> str:
    """One row per (msg_id, attack_class); metrics at 4 decimal places."""
    rows = report.rows()
    if not rows:
        raise ValueError("report has no (msg_id, attack_class) cells")
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        writer.writerow(
            [
                row["msg_id"], row["attack_class"],
                f"{row['accuracy']:.4f}", f"{row['fpr']:.4f}", f"{row['precision']:.4f}",
                row["tp"], row["tn"], row["fp"], row["fn"],
                int(row["fpr_defined"]), int(row["precision_defined"]),
            ]
        )
    return buf.getvalue()


def emit_score_traces(msg_id, verdicts) -> str:
    """Long-format per-message score trace for external plotting."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["msg_id", "index", "timestamp", "signal", "score", "label"])
    for i in range(len(verdicts.labels)):
        for s in range(verdicts.scores.shape[1]):
            writer.writerow(
                [
                    msg_id,
                    int(verdicts.indices[i]),
                    f"{verdicts.timestamps[i]:.6f}",
                    s,
                    repr(float(verdicts.scores[i, s])),
                    int(verdicts.labels[i]),
                ]
            )
    return buf.getvalue()
