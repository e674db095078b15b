"""The three experiments: random search, line traversal, prediction.

All timing goes through a :class:`Harness`, which runs one measurement at a
time; nothing here is threaded.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .anomaly import AlgorithmTime, Thresholds, Verdict, classify
from .execution import (
    AlgorithmTiming,
    Backend,
    MachineConfig,
    MeasurementProtocol,
    TimingSample,
    measure_algorithm,
    measure_call_isolated,
)
from .expr import ExpressionKind, Instance, enumerate_algorithms, flop_count_algorithm

log = logging.getLogger(__name__)


class OriginNotAnomalous(ValueError):
    def __init__(self, instance: Instance):
        super().__init__(f"origin not an anomaly: {instance.dims}")
        self.instance = instance


@dataclass(frozen=True)
class SearchSpace:
    lower: tuple[int, ...]
    upper: tuple[int, ...]
    step: int = 10

    def __post_init__(self) -> None:
        lo, hi = tuple(map(int, self.lower)), tuple(map(int, self.upper))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if len(lo) != len(hi):
            raise ValueError("lower and upper must have one entry per dimension")
        if any(a < 1 or a > b for a, b in zip(lo, hi)):
            raise ValueError(f"invalid bounds {lo} .. {hi}")
        if self.step < 1:
            raise ValueError("step must be >= 1")

    @classmethod
    def box(cls, ndims: int, lower: int = 20, upper: int = 1200, step: int = 10) -> "SearchSpace":
        return cls((lower,) * ndims, (upper,) * ndims, step)

    @property
    def ndims(self) -> int:
        return len(self.lower)


@dataclass(frozen=True)
class RandomSearchConfig:
    rng_seed: int = 0
    target_anomalies: int = 100
    max_samples: int = 100_000
    thresholds: Thresholds = field(default_factory=Thresholds)

    def __post_init__(self) -> None:
        if self.target_anomalies < 1:
            raise ValueError("target_anomalies must be >= 1")
        if self.max_samples < self.target_anomalies:
            raise ValueError("max_samples must be >= target_anomalies")


@dataclass(frozen=True)
class Sample:
    """A classified instance together with the timings behind the verdict."""

    verdict: Verdict
    timings: tuple[AlgorithmTiming, ...] = ()

    @property
    def instance(self) -> Instance:
        return self.verdict.instance


class Harness:
    """Measures every algorithm of an expression on an instance."""

    def __init__(self, kind: ExpressionKind, backend: Backend,
                 protocol: MeasurementProtocol, machine: MachineConfig):
        self.kind = kind
        self.backend = backend
        self.protocol = protocol
        self.machine = machine
        self.algorithms = enumerate_algorithms(kind)

    def measure(self, inst: Instance) -> tuple[AlgorithmTiming, ...]:
        return tuple(
            measure_algorithm(self.backend, alg, inst, self.protocol, self.machine)
            for alg in self.algorithms
        )

    def evaluate(self, inst: Instance, thresholds: Thresholds) -> Sample:
        timings = self.measure(inst)
        rows = [
            AlgorithmTime(t.algorithm_id, t.total.flops, t.total.median_seconds, t.total.efficiency)
            for t in timings
        ]
        return Sample(classify(rows, thresholds, inst), timings)


# -- Experiment 1 ------------------------------------------------------------


@dataclass
class SearchResult:
    samples: list[Sample]
    anomalies: list[Sample]
    partial: bool

    @property
    def sample_count(self) -> int:
        return len(self.samples)

    @property
    def abundance(self) -> float:
        return len(self.anomalies) / self.sample_count if self.samples else 0.0


def random_search(kind: ExpressionKind, space: SearchSpace, config: RandomSearchConfig,
                  harness: Harness) -> SearchResult:
    """Sample instances uniformly with replacement until enough distinct
    anomalies are found or the sample budget runs out."""
    if space.ndims != kind.ndims:
        raise ValueError(f"search space has {space.ndims} dims, {kind} needs {kind.ndims}")
    rng = np.random.default_rng(config.rng_seed)
    lo = np.array(space.lower)
    hi = np.array(space.upper) + 1
    samples: list[Sample] = []
    anomalies: list[Sample] = []
    seen: set[tuple[int, ...]] = set()
    while len(samples) < config.max_samples and len(anomalies) < config.target_anomalies:
        dims = tuple(int(d) for d in rng.integers(lo, hi))
        sample = harness.evaluate(Instance(kind, dims), config.thresholds)
        samples.append(sample)
        if sample.verdict.is_anomaly and dims not in seen:
            seen.add(dims)
            anomalies.append(sample)
    partial = len(anomalies) < config.target_anomalies
    if partial:
        log.warning("sample budget exhausted: %d/%d anomalies in %d samples",
                    len(anomalies), config.target_anomalies, len(samples))
    return SearchResult(samples, anomalies, partial)


# -- Experiment 2 ------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    origin: Instance
    dimension_index: int
    a: int
    b: int
    holes: tuple[int, ...] = ()
    hit_space_boundary_low: bool = False
    hit_space_boundary_high: bool = False

    def __post_init__(self) -> None:
        if not self.a < self.b:
            raise ValueError(f"region needs a < b, got a={self.a}, b={self.b}")
        if any(not self.a < h < self.b for h in self.holes):
            raise ValueError("holes must lie strictly between a and b")

    @property
    def thickness(self) -> int:
        return self.b - self.a - 1


@dataclass(frozen=True)
class DirectionTrace:
    boundary: int
    holes: tuple[int, ...]
    hit_space_boundary: bool
    visited: tuple[tuple[int, bool], ...]


def trace_direction(origin: int, direction: int, step: int, lo: int, hi: int,
                    is_anomaly: Callable[[int], bool], overshoot: int = 0) -> DirectionTrace:
    """Walk ``origin + direction*step*x`` for ``x = 1, 2, ...``.

    One or two consecutive non-anomalies followed by an anomaly are a hole.
    Three in a row end the walk and the first of them is the boundary.
    Leaving ``[lo, hi]`` ends the walk at the last sampled position.
    ``overshoot`` extra positions are sampled past a detected end; they are
    recorded but never change the result.
    """
    visited: list[tuple[int, bool]] = []
    run: list[int] = []
    holes: list[int] = []
    last = origin
    x = 1
    while True:
        pos = origin + direction * step * x
        if pos < lo or pos > hi:
            holes.extend(p for p in run if p != last)
            return DirectionTrace(last, tuple(holes), True, tuple(visited))
        label = bool(is_anomaly(pos))
        visited.append((pos, label))
        last = pos
        if label:
            holes.extend(run)
            run = []
        else:
            run.append(pos)
            if len(run) == 3:
                for extra in range(1, overshoot + 1):
                    p = pos + direction * step * extra
                    if lo <= p <= hi:
                        visited.append((p, bool(is_anomaly(p))))
                return DirectionTrace(run[0], tuple(holes), False, tuple(visited))
        x += 1


@dataclass
class LineResult:
    region: Region
    samples: list[Sample]     # ordered by position along the line
    positions: list[int]


def trace_line(origin: Instance, dimension_index: int, space: SearchSpace,
               is_anomaly: Callable[[int], bool], overshoot: int = 0):
    """Region rules on a label function of the position along one axis."""
    o = origin.dims[dimension_index]
    lo, hi = space.lower[dimension_index], space.upper[dimension_index]
    down = trace_direction(o, -1, space.step, lo, hi, is_anomaly, overshoot)
    up = trace_direction(o, +1, space.step, lo, hi, is_anomaly, overshoot)
    region = Region(
        origin=origin,
        dimension_index=dimension_index,
        a=down.boundary,
        b=up.boundary,
        holes=tuple(sorted(down.holes + up.holes)),
        hit_space_boundary_low=down.hit_space_boundary,
        hit_space_boundary_high=up.hit_space_boundary,
    )
    return region, down, up


def traverse_line(origin: Instance, dimension_index: int, space: SearchSpace,
                  harness: Harness, thresholds: Thresholds, overshoot: int = 0) -> LineResult:
    if not 0 <= dimension_index < origin.kind.ndims:
        raise ValueError(f"dimension index {dimension_index} out of range")
    cache: dict[int, Sample] = {}

    def sample_at(pos: int) -> Sample:
        if pos not in cache:
            cache[pos] = harness.evaluate(origin.with_dim(dimension_index, pos), thresholds)
        return cache[pos]

    o = origin.dims[dimension_index]
    if not sample_at(o).verdict.is_anomaly:
        raise OriginNotAnomalous(origin)
    region, _, _ = trace_line(
        origin, dimension_index, space, lambda p: sample_at(p).verdict.is_anomaly, overshoot
    )
    positions = sorted(cache)
    return LineResult(region, [cache[p] for p in positions], positions)


def explore_regions(anomaly: Verdict | Sample | Instance, space: SearchSpace, harness: Harness,
                    thresholds: Thresholds, overshoot: int = 0) -> list[LineResult]:
    """One axis-aligned line per dimension through an anomaly."""
    if isinstance(anomaly, Sample):
        anomaly = anomaly.verdict
    inst = anomaly.instance if isinstance(anomaly, Verdict) else anomaly
    return [
        traverse_line(inst, d, space, harness, thresholds, overshoot)
        for d in range(inst.kind.ndims)
    ]


# -- Experiment 3 ------------------------------------------------------------


@dataclass
class PredictionResult:
    verdicts: list[Verdict]
    benchmarks: dict[tuple, TimingSample]


def _round_sig(x: float, digits: int) -> float:
    return float(f"{x:.{digits}g}")


def predict_from_benchmarks(instances: Iterable[Instance], harness: Harness,
                            thresholds: Thresholds,
                            quantize_digits: int | None = None) -> PredictionResult:
    """Benchmark every distinct call once in isolation, predict each
    algorithm's time as the sum of its calls, and classify on that.

    ``quantize_digits`` rounds predicted times to the precision of stored
    measurements so file-backed comparisons are like for like.
    """
    instances = list(instances)
    bound = [(inst, [(alg, alg.bind(inst)) for alg in harness.algorithms]) for inst in instances]
    benchmarks: dict[tuple, TimingSample] = {}
    for _, algs in bound:
        for _, steps in algs:
            for step in steps:
                if step.key not in benchmarks:
                    benchmarks[step.key] = measure_call_isolated(
                        harness.backend, step, harness.protocol, harness.machine
                    )
    verdicts = []
    for inst, algs in bound:
        rows = []
        for alg, steps in algs:
            seconds = sum(benchmarks[s.key].median_seconds for s in steps)
            if quantize_digits is not None:
                seconds = _round_sig(seconds, quantize_digits)
            flops = flop_count_algorithm(alg, inst)
            eff = flops / (seconds * harness.machine.peak_flops)
            rows.append(AlgorithmTime(alg.id, flops, seconds, eff))
        verdicts.append(classify(rows, thresholds, inst))
    return PredictionResult(verdicts, benchmarks)
