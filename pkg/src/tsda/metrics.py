"""Classification metrics and the domain-gap row."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction

import numpy as np

from .errors import ArgumentError


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ArgumentError("y_true and y_pred lengths differ")
    if y_true.size == 0:
        raise ArgumentError("empty prediction set")
    for y in (y_true, y_pred):
        if y.min() < 0 or y.max() >= num_classes:
            raise ArgumentError(f"labels outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def macro_f1(y_true, y_pred, num_classes: int) -> float:
    """Unweighted mean of per-class F1.

    Classes absent from both ``y_true`` and ``y_pred`` are left out; a
    class that occurs but is never predicted scores 0.
    """
    cm = confusion_matrix(y_true, y_pred, num_classes)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(1)
    predicted = cm.sum(0)
    present = np.flatnonzero((support + predicted) > 0)
    # rational arithmetic so the mean is correctly rounded (e.g. exactly 11/15)
    total = sum(Fraction(2 * int(tp[k]), int(support[k] + predicted[k])) for k in present)
    return float(total / len(present))


def accuracy(y_true, y_pred) -> float:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ArgumentError("y_true and y_pred lengths differ")
    if y_true.size == 0:
        raise ArgumentError("empty prediction set")
    return float(np.mean(y_true == y_pred))


@dataclass(frozen=True)
class MetricPair:
    macro_f1: float
    accuracy: float


def evaluate(y_true, y_pred, num_classes: int) -> MetricPair:
    return MetricPair(macro_f1(y_true, y_pred, num_classes), accuracy(y_true, y_pred))


@dataclass(frozen=True)
class DomainGapRow:
    dataset: str
    target_only: float
    source_only: float
    gap: float


def domain_gap(target_only_f1: float, source_only_f1: float, dataset: str = "") -> DomainGapRow:
    """Gap between the target-only (upper) and source-only (lower) bounds.

    Both bounds must share a scale, ratio [0, 1] or percent [0, 100].  The
    difference is taken in decimal arithmetic so printed table values
    subtract exactly.
    """
    a, b = float(target_only_f1), float(source_only_f1)
    for v in (a, b):
        if not 0.0 <= v <= 100.0:
            raise ArgumentError(f"F1 value {v} outside [0, 100]")
    if (a > 1.0) != (b > 1.0) and max(a, b) > 1.0 and min(a, b) > 0.0:
        raise ArgumentError(f"scale mismatch: {a} and {b}")
    gap = float(Decimal(repr(a)) - Decimal(repr(b)))
    return DomainGapRow(dataset, a, b, gap)
