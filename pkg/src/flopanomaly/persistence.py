"""Run directories, manifests and the CSV/JSON result formats.

Layout of a run directory::

    runs/<run-id>/manifest.json
                  samples.csv anomalies.csv regions.csv predictions.csv
                  confusion.csv bench.csv lines.csv steps.csv
                  plots/*.csv

Every CSV has a header row and a ``run_id`` column. Times are written with
9 significant digits; scores use the shortest exact float representation.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import os
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .anomaly import AlgorithmTime, Verdict
from .execution import AlgorithmTiming, MachineConfig, TimingSample
from .experiments import Region, Sample
from .expr import ExpressionKind, Instance, enumerate_algorithms
from .metrics import ConfusionMatrix, Metrics


class CorruptFileError(IOError):
    def __init__(self, path, row: int, message: str):
        super().__init__(f"{path}: row {row}: {message}")
        self.path = Path(path)
        self.row = row


def fmt_seconds(x: float) -> str:
    return format(x, ".9g")


def fmt_float(x: float) -> str:
    return repr(float(x))


def fmt_ids(ids: Iterable[int]) -> str:
    return ";".join(str(i) for i in sorted(ids))


def fmt_bool(b: bool) -> str:
    return "true" if b else "false"


def parse_ids(text: str) -> frozenset[int]:
    return frozenset(int(t) for t in text.split(";") if t)


def parse_bool(text: str) -> bool:
    if text not in ("true", "false"):
        raise ValueError(f"expected true/false, got {text!r}")
    return text == "true"


def parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(";") if t)


def tool_version() -> str:
    try:
        rev = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def derive_run_id(command: str, config: dict) -> str:
    """Deterministic id: same command and effective config give the same id."""
    digest = hashlib.sha256(canonical_json(config).encode()).hexdigest()[:10]
    return f"{command}-{digest}"


# -- manifest ----------------------------------------------------------------


@dataclass
class RunManifest:
    run_id: str
    command: str
    config: dict
    rng_seed: int
    machine: dict
    tool_version: str = field(default_factory=tool_version)
    started: str = field(default_factory=_now)
    finished: str | None = None
    summary: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @classmethod
    def create(cls, run_id: str, command: str, config: dict, rng_seed: int,
               machine: MachineConfig) -> "RunManifest":
        return cls(run_id, command, config, rng_seed, asdict(machine))


class RunDir:
    """Single writer for one run directory."""

    def __init__(self, root: Path, manifest: RunManifest):
        self.path = Path(root) / manifest.run_id
        self.manifest = manifest

    def open(self) -> "RunDir":
        self.path.mkdir(parents=True, exist_ok=True)
        self.write_manifest()
        return self

    def write_manifest(self) -> None:
        tmp = self.path / "manifest.json.tmp"
        tmp.write_text(json.dumps(asdict(self.manifest), indent=2, sort_keys=True, default=str) + "\n")
        os.replace(tmp, self.path / "manifest.json")

    def finish(self, **summary) -> None:
        self.manifest.summary.update(summary)
        self.manifest.finished = _now()
        self.write_manifest()

    def file(self, name: str) -> Path:
        p = self.path / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p


def read_manifest(run_dir: Path) -> RunManifest:
    path = Path(run_dir) / "manifest.json"
    try:
        return RunManifest(**json.loads(path.read_text()))
    except (ValueError, TypeError) as exc:
        raise CorruptFileError(path, 1, f"unreadable manifest: {exc}") from exc


# -- generic CSV ---------------------------------------------------------------


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def read_csv(path: Path, required: Sequence[str] = ()) -> list[tuple[int, dict]]:
    """Rows as ``(row_number, dict)``; row 1 is the header."""
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise CorruptFileError(path, 1, "missing header row") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise CorruptFileError(path, 1, f"missing columns {missing}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise CorruptFileError(path, lineno, f"expected {len(header)} fields, got {len(rec)}")
            rows.append((lineno, dict(zip(header, rec))))
    return rows


def _parse_rows(path, rows, parse):
    out = []
    for lineno, rec in rows:
        try:
            out.append(parse(rec))
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptFileError(path, lineno, str(exc)) from exc
    return out


# -- verdicts -------------------------------------------------------------------


def _dim_cols(kind: ExpressionKind) -> list[str]:
    return [f"d{i}" for i in range(kind.ndims)]


def verdict_header(kind: ExpressionKind) -> list[str]:
    ids = [a.id for a in enumerate_algorithms(kind)]
    detail = []
    for i in ids:
        detail += [f"flops_{i}", f"seconds_{i}", f"efficiency_{i}"]
    return ["kind", *_dim_cols(kind), "cheapest_ids", "fastest_ids", "time_score",
            "flop_score", "is_anomaly", "run_id", *detail]


def verdict_row(v: Verdict, run_id: str) -> list[str]:
    inst = v.instance
    row = [str(inst.kind), *map(str, inst.dims), fmt_ids(v.cheapest_ids), fmt_ids(v.fastest_ids),
           fmt_float(v.time_score), fmt_float(v.flop_score), fmt_bool(v.is_anomaly), run_id]
    for a in sorted(v.per_algorithm, key=lambda r: r.id):
        eff = "" if a.efficiency is None else fmt_seconds(a.efficiency)
        row += [str(a.flops), fmt_seconds(a.seconds), eff]
    return row


def write_verdicts(path: Path, verdicts: Sequence[Verdict], kind: ExpressionKind, run_id: str) -> None:
    write_csv(path, verdict_header(kind), (verdict_row(v, run_id) for v in verdicts))


def _parse_verdict(rec: dict) -> Verdict:
    kind = ExpressionKind.parse(rec["kind"])
    dims = tuple(int(rec[c]) for c in _dim_cols(kind))
    per = []
    for a in enumerate_algorithms(kind):
        if f"flops_{a.id}" in rec:
            eff = rec[f"efficiency_{a.id}"]
            per.append(AlgorithmTime(a.id, int(rec[f"flops_{a.id}"]), float(rec[f"seconds_{a.id}"]),
                                     float(eff) if eff else None))
    ts, fs = float(rec["time_score"]), float(rec["flop_score"])
    if not (0 <= ts <= 1 and 0 <= fs <= 1):
        raise ValueError("scores must lie in [0, 1]")
    return Verdict(
        instance=Instance(kind, dims),
        cheapest_ids=parse_ids(rec["cheapest_ids"]),
        fastest_ids=parse_ids(rec["fastest_ids"]),
        time_score=ts,
        flop_score=fs,
        is_anomaly=parse_bool(rec["is_anomaly"]),
        per_algorithm=tuple(per),
    )


def read_verdicts(path: Path) -> list[Verdict]:
    rows = read_csv(path, ["kind", "cheapest_ids", "fastest_ids", "time_score", "flop_score",
                           "is_anomaly", "run_id"])
    return _parse_rows(path, rows, _parse_verdict)


def quantized(v: Verdict) -> Verdict:
    """The verdict as it reads back from CSV (times, efficiencies at 9 digits)."""
    per = tuple(
        AlgorithmTime(a.id, a.flops, float(fmt_seconds(a.seconds)),
                      None if a.efficiency is None else float(fmt_seconds(a.efficiency)))
        for a in v.per_algorithm
    )
    return Verdict(v.instance, v.cheapest_ids, v.fastest_ids, v.time_score, v.flop_score,
                   v.is_anomaly, per)


def verdict_to_json(v: Verdict) -> dict:
    return {
        "instance": v.instance.to_dict() if v.instance is not None else None,
        "cheapest_ids": sorted(v.cheapest_ids),
        "fastest_ids": sorted(v.fastest_ids),
        "time_score": v.time_score,
        "flop_score": v.flop_score,
        "is_anomaly": v.is_anomaly,
        "per_algorithm": [a._asdict() for a in v.per_algorithm],
    }


def verdict_from_json(data: dict) -> Verdict:
    return Verdict(
        instance=Instance.from_dict(data["instance"]) if data.get("instance") else None,
        cheapest_ids=frozenset(data["cheapest_ids"]),
        fastest_ids=frozenset(data["fastest_ids"]),
        time_score=float(data["time_score"]),
        flop_score=float(data["flop_score"]),
        is_anomaly=bool(data["is_anomaly"]),
        per_algorithm=tuple(AlgorithmTime(**a) for a in data["per_algorithm"]),
    )


def write_verdicts_json(path: Path, verdicts: Sequence[Verdict], run_id: str) -> None:
    Path(path).write_text(json.dumps(
        {"run_id": run_id, "verdicts": [verdict_to_json(v) for v in verdicts]}, indent=1) + "\n")


def read_verdicts_json(path: Path) -> list[Verdict]:
    return [verdict_from_json(d) for d in json.loads(Path(path).read_text())["verdicts"]]


# -- regions ----------------------------------------------------------------------


def region_header(kind: ExpressionKind) -> list[str]:
    return ["kind", *_dim_cols(kind), "dimension_index", "a", "b", "thickness", "holes",
            "hit_space_boundary_low", "hit_space_boundary_high", "run_id"]


def write_regions(path: Path, regions: Sequence[Region], kind: ExpressionKind, run_id: str) -> None:
    rows = (
        [str(r.origin.kind), *map(str, r.origin.dims), r.dimension_index, r.a, r.b, r.thickness,
         ";".join(map(str, r.holes)), fmt_bool(r.hit_space_boundary_low),
         fmt_bool(r.hit_space_boundary_high), run_id]
        for r in regions
    )
    write_csv(path, region_header(kind), rows)


def _parse_region(rec: dict) -> Region:
    kind = ExpressionKind.parse(rec["kind"])
    r = Region(
        origin=Instance(kind, tuple(int(rec[c]) for c in _dim_cols(kind))),
        dimension_index=int(rec["dimension_index"]),
        a=int(rec["a"]),
        b=int(rec["b"]),
        holes=parse_int_list(rec["holes"]),
        hit_space_boundary_low=parse_bool(rec["hit_space_boundary_low"]),
        hit_space_boundary_high=parse_bool(rec["hit_space_boundary_high"]),
    )
    if r.thickness != int(rec["thickness"]):
        raise ValueError("thickness does not equal b - a - 1")
    return r


def read_regions(path: Path) -> list[Region]:
    rows = read_csv(path, ["kind", "dimension_index", "a", "b", "thickness", "holes", "run_id"])
    return _parse_rows(path, rows, _parse_region)


# -- line samples with per-step timings -------------------------------------------

LINES_HEADER = ["line_id", "sample_index", "dimension_index", "position", "run_id"]
STEPS_HEADER = ["sample_index", "algorithm_id", "step_index", "kernel", "flops",
                "median_seconds", "efficiency", "run_id"]


@dataclass
class Line:
    line_id: int
    dimension_index: int
    positions: list[int]
    samples: list[Sample]


def write_lines(run: RunDir, lines: Sequence[Line], kind: ExpressionKind) -> None:
    """samples.csv (one verdict per line sample), lines.csv, steps.csv."""
    run_id = run.manifest.run_id
    algs = {a.id: a for a in enumerate_algorithms(kind)}
    verdicts, line_rows, step_rows = [], [], []
    for line in lines:
        for pos, s in zip(line.positions, line.samples):
            idx = len(verdicts)
            verdicts.append(s.verdict)
            line_rows.append([line.line_id, idx, line.dimension_index, pos, run_id])
            for t in s.timings:
                steps = algs[t.algorithm_id].templates
                for j, st in enumerate(t.steps, start=1):
                    step_rows.append([idx, t.algorithm_id, j, steps[j - 1].kernel.value, st.flops,
                                      fmt_seconds(st.median_seconds), fmt_seconds(st.efficiency),
                                      run_id])
    write_verdicts(run.file("samples.csv"), verdicts, kind, run_id)
    write_csv(run.file("lines.csv"), LINES_HEADER, line_rows)
    write_csv(run.file("steps.csv"), STEPS_HEADER, step_rows)


def read_lines(run_dir: Path) -> list[Line]:
    run_dir = Path(run_dir)
    verdicts = read_verdicts(run_dir / "samples.csv")
    line_path, step_path = run_dir / "lines.csv", run_dir / "steps.csv"

    def p_line(rec):
        return (int(rec["line_id"]), int(rec["sample_index"]), int(rec["dimension_index"]),
                int(rec["position"]))

    def p_step(rec):
        return (int(rec["sample_index"]), int(rec["algorithm_id"]), int(rec["step_index"]),
                TimingSample(float(rec["median_seconds"]), (), int(rec["flops"]),
                             float(rec["efficiency"])))

    line_recs = _parse_rows(line_path, read_csv(line_path, LINES_HEADER), p_line)
    step_recs = _parse_rows(step_path, read_csv(step_path, STEPS_HEADER), p_step)
    per_sample: dict[int, dict[int, list[tuple[int, TimingSample]]]] = {}
    for idx, alg_id, j, ts in step_recs:
        per_sample.setdefault(idx, {}).setdefault(alg_id, []).append((j, ts))
    lines: dict[int, Line] = {}
    for line_id, idx, dim, pos in line_recs:
        if not 0 <= idx < len(verdicts):
            raise CorruptFileError(line_path, idx + 2, f"sample index {idx} out of range")
        v = verdicts[idx]
        timings = []
        for a in sorted(v.per_algorithm, key=lambda r: r.id):
            parts = [ts for _, ts in sorted(per_sample.get(idx, {}).get(a.id, []), key=lambda p: p[0])]
            total = TimingSample(a.seconds, (), a.flops, a.efficiency or 0.0)
            timings.append(AlgorithmTiming(a.id, total, tuple(parts)))
        line = lines.setdefault(line_id, Line(line_id, dim, [], []))
        line.positions.append(pos)
        line.samples.append(Sample(v, tuple(timings)))
    return [lines[k] for k in sorted(lines)]


# -- predictions / confusion / bench ---------------------------------------------


def prediction_header(kind: ExpressionKind) -> list[str]:
    ids = [a.id for a in enumerate_algorithms(kind)]
    return ["kind", *_dim_cols(kind), "actual_is_anomaly", "predicted_is_anomaly",
            "actual_cheapest_ids", "actual_fastest_ids", "predicted_fastest_ids",
            "actual_time_score", "predicted_time_score", "run_id",
            *[f"predicted_seconds_{i}" for i in ids]]


def write_predictions(path: Path, actual: Sequence[Verdict], predicted: Sequence[Verdict],
                      kind: ExpressionKind, run_id: str) -> None:
    rows = []
    for a, p in zip(actual, predicted):
        rows.append([
            str(kind), *map(str, a.instance.dims), fmt_bool(a.is_anomaly), fmt_bool(p.is_anomaly),
            fmt_ids(a.cheapest_ids), fmt_ids(a.fastest_ids), fmt_ids(p.fastest_ids),
            fmt_float(a.time_score), fmt_float(p.time_score), run_id,
            *[fmt_seconds(r.seconds) for r in sorted(p.per_algorithm, key=lambda r: r.id)],
        ])
    write_csv(path, prediction_header(kind), rows)


CONFUSION_HEADER = ["kind", "tn", "fp", "fn", "tp", "total", "recall", "precision", "run_id"]


def write_confusion(path: Path, cm: ConfusionMatrix, m: Metrics, kind: ExpressionKind,
                    run_id: str) -> None:
    fmt = lambda x: "" if x is None else fmt_float(x)  # noqa: E731
    write_csv(path, CONFUSION_HEADER,
              [[str(kind), cm.tn, cm.fp, cm.fn, cm.tp, cm.total, fmt(m.recall), fmt(m.precision),
                run_id]])


def read_confusion(path: Path) -> ConfusionMatrix:
    rows = read_csv(path, CONFUSION_HEADER)
    (cm,) = _parse_rows(path, rows, lambda r: ConfusionMatrix(
        tn=int(r["tn"]), fp=int(r["fp"]), fn=int(r["fn"]), tp=int(r["tp"])))
    return cm


BENCH_HEADER = ["kernel", "m", "n", "k", "flops", "median_seconds", "efficiency", "flags", "run_id"]
