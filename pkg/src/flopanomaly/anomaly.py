"""Anomaly classification: is a cheapest algorithm among the fastest?"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from .expr import Instance


class ScoreError(ValueError):
    """Score inputs violate the ordering that classification guarantees."""


@dataclass(frozen=True)
class Thresholds:
    time_score_threshold: float = 0.10

    def __post_init__(self) -> None:
        if not 0 <= self.time_score_threshold < 1:
            raise ValueError("time_score_threshold must be in [0, 1)")


class AlgorithmTime(NamedTuple):
    id: int
    flops: int
    seconds: float
    efficiency: float | None = None


@dataclass(frozen=True)
class Verdict:
    instance: Instance | None
    cheapest_ids: frozenset[int]
    fastest_ids: frozenset[int]
    time_score: float
    flop_score: float
    is_anomaly: bool
    per_algorithm: tuple[AlgorithmTime, ...] = field(default=(), compare=True)

    @property
    def disjoint(self) -> bool:
        return not (self.cheapest_ids & self.fastest_ids)

    def annotation(self, alg_id: int) -> str:
        c = alg_id in self.cheapest_ids
        f = alg_id in self.fastest_ids
        return "both" if c and f else "cheapest" if c else "fastest" if f else "neither"


def time_score(t_cheapest: float, t_fastest: float) -> float:
    if t_fastest > t_cheapest:
        raise ScoreError(
            f"fastest time {t_fastest} exceeds cheapest time {t_cheapest}"
        )
    if not t_fastest > 0:
        raise ScoreError("times must be > 0")
    return (t_cheapest - t_fastest) / t_cheapest


def flop_score(f_fastest: int, f_cheapest: int) -> float:
    if f_cheapest > f_fastest:
        raise ScoreError(
            f"cheapest FLOP count {f_cheapest} exceeds fastest's {f_fastest}"
        )
    if f_cheapest <= 0:
        raise ScoreError("FLOP counts must be > 0")
    return (f_fastest - f_cheapest) / f_fastest


def classify(per_algorithm: Iterable[Sequence], thresholds: Thresholds,
             instance: Instance | None = None) -> Verdict:
    """Build the verdict for one instance from ``(id, flops, seconds[, eff])`` rows."""
    rows = tuple(AlgorithmTime(*r) for r in per_algorithm)
    if not rows:
        raise ValueError("classify needs at least one algorithm")
    if any(not r.seconds > 0 for r in rows):
        raise ValueError("all execution times must be > 0")
    f_min = min(r.flops for r in rows)
    t_min = min(r.seconds for r in rows)
    cheapest = frozenset(r.id for r in rows if r.flops == f_min)
    fastest = frozenset(r.id for r in rows if r.seconds == t_min)
    t_cheapest = min(r.seconds for r in rows if r.id in cheapest)
    f_fastest = min(r.flops for r in rows if r.id in fastest)
    ts = time_score(t_cheapest, t_min)
    fs = flop_score(f_fastest, f_min)
    anomalous = not (cheapest & fastest) and ts > thresholds.time_score_threshold
    return Verdict(instance, cheapest, fastest, ts, fs, anomalous, rows)


def reclassify(verdict: Verdict, thresholds: Thresholds) -> Verdict:
    return classify(verdict.per_algorithm, thresholds, verdict.instance)
