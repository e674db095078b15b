from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int = 0
    fp: int = 0
    fn: int = 0
    tp: int = 0

    def __post_init__(self) -> None:
        if min(self.tn, self.fp, self.fn, self.tp) < 0:
            raise ValueError("confusion counts must be >= 0")

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    @property
    def off_diagonal(self) -> int:
        return self.fp + self.fn


@dataclass(frozen=True)
class Metrics:
    """``None`` marks a metric whose denominator is zero."""

    recall: float | None
    precision: float | None


def confusion(actual: Sequence[bool], predicted: Sequence[bool]) -> ConfusionMatrix:
    """Rows are the actual class, columns the predicted class."""
    if len(actual) != len(predicted):
        raise ValueError(f"length mismatch: {len(actual)} actual vs {len(predicted)} predicted")
    tn = fp = fn = tp = 0
    for a, p in zip(actual, predicted):
        if a and p:
            tp += 1
        elif a:
            fn += 1
        elif p:
            fp += 1
        else:
            tn += 1
    return ConfusionMatrix(tn=tn, fp=fp, fn=fn, tp=tp)


def metrics(cm: ConfusionMatrix) -> Metrics:
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn > 0 else None
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp > 0 else None
    return Metrics(recall, precision)
