"""Plot data (never rendered here): score scatter, thickness histograms and
efficiency along traversal lines."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .anomaly import Verdict
from .experiments import Region, Sample
from .persistence import write_csv

SCATTER = "scatter_time_vs_flop"
HISTOGRAM = "thickness_histogram"
EFFICIENCY = "efficiency_line"


@dataclass
class PlotSeries:
    kind: str
    label: str
    fields: tuple[str, ...]
    points: list[tuple] = field(default_factory=list)
    annotations: list[str] = field(default_factory=list)

    def write(self, path: Path) -> None:
        write_series(path, [self])


def write_series(path: Path, series: Sequence[PlotSeries], fields: Sequence[str] | None = None) -> None:
    """All series of one figure panel into one CSV, one row per point."""
    if fields is None:
        fields = series[0].fields if series else ()
    rows = []
    for s in series:
        for i, pt in enumerate(s.points):
            ann = s.annotations[i] if s.annotations else ""
            rows.append([s.kind, s.label, *pt, ann])
    write_csv(path, ["series", "label", *fields, "annotation"], rows)


def emit_scatter(anomalies: Iterable[Verdict]) -> PlotSeries:
    s = PlotSeries(SCATTER, "anomalies", ("flop_score", "time_score"))
    for v in anomalies:
        if not v.is_anomaly:
            raise ValueError(f"non-anomalous verdict in scatter input: {v.instance}")
        s.points.append((v.flop_score, v.time_score))
    return s


def emit_thickness_histogram(regions: Iterable[Region], dimension_index: int,
                             bin_width: int = 100) -> PlotSeries:
    """Counts of thickness in ``[lo, lo + bin_width)`` bins starting at 0."""
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    values = [r.thickness for r in regions if r.dimension_index == dimension_index]
    s = PlotSeries(HISTOGRAM, f"d{dimension_index}", ("bin_lo", "bin_hi", "count"))
    if not values:
        return s
    counts = [0] * (max(values) // bin_width + 1)
    for t in values:
        counts[t // bin_width] += 1
    s.points = [(i * bin_width, (i + 1) * bin_width, c) for i, c in enumerate(counts)]
    return s


def emit_efficiency_lines(positions: Sequence[int], samples: Sequence[Sample]) -> dict[int, list[PlotSeries]]:
    """Per algorithm: whole-algorithm efficiency followed by one series per
    kernel call, annotated with the algorithm's cheapest/fastest status.

    Zero-FLOP steps (the triangle copy) have no efficiency and get no series.
    """
    if len(positions) != len(samples):
        raise ValueError("one position per sample required")
    out: dict[int, list[PlotSeries]] = {}
    for pos, sample in zip(positions, samples):
        if not sample.timings:
            raise ValueError(f"sample at {pos} carries no per-step timings")
        for t in sample.timings:
            if not t.steps:
                raise ValueError(f"sample at {pos}, algorithm {t.algorithm_id}: no step data")
            calls = [st for st in t.steps if st.flops > 0]
            series = out.get(t.algorithm_id)
            if series is None:
                series = [PlotSeries(EFFICIENCY, f"alg{t.algorithm_id}/total", ("position", "efficiency"))]
                series += [
                    PlotSeries(EFFICIENCY, f"alg{t.algorithm_id}/step{j}", ("position", "efficiency"))
                    for j in range(1, len(calls) + 1)
                ]
                out[t.algorithm_id] = series
            if len(series) != len(calls) + 1:
                raise ValueError("inconsistent step count along the line")
            ann = sample.verdict.annotation(t.algorithm_id)
            for s, value in zip(series, (t.total.efficiency, *(st.efficiency for st in calls))):
                s.points.append((pos, value))
                s.annotations.append(ann)
    return dict(sorted(out.items()))
