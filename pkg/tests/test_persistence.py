import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from flopanomaly import persistence as io
from flopanomaly.anomaly import Thresholds, classify
from flopanomaly.execution import (
    EfficiencyProfile,
    KernelCurve,
    MachineConfig,
    MeasurementProtocol,
    SyntheticBackend,
)
from flopanomaly.experiments import Harness, Region, SearchSpace, traverse_line
from flopanomaly.expr import ExpressionKind, Instance
from flopanomaly.metrics import ConfusionMatrix, metrics

AATB = ExpressionKind.aatb()
CHAIN4 = ExpressionKind.chain(4)


def make_run(tmp_path, command="search"):
    m = io.RunManifest.create(f"{command}-test", command, {"seed": 1}, 1, MachineConfig())
    return io.RunDir(tmp_path, m).open()


def verdict(dims=(100, 1000, 1000), times=(2.0, 2.1, 1.0, 0.9, 3.0)):
    flops = [30_100_000, 30_100_000, 40_000_000, 40_000_000, 400_000_000]
    rows = [(i + 1, f, t, f / (t * 1e9)) for i, (f, t) in enumerate(zip(flops, times))]
    return classify(rows, Thresholds(0.1), Instance(AATB, dims))


def test_formatters():
    assert io.fmt_ids({5, 2}) == "2;5"
    assert io.parse_ids("2;5") == {2, 5} and io.parse_ids("") == frozenset()
    assert io.fmt_bool(True) == "true" and io.parse_bool("false") is False
    with pytest.raises(ValueError):
        io.parse_bool("yes")
    assert io.fmt_seconds(1 / 3) == "0.333333333"
    assert float(io.fmt_float(0.1 + 0.2)) == 0.1 + 0.2
    assert io.parse_int_list("") == () and io.parse_int_list("3;4") == (3, 4)


def test_run_id_deterministic():
    a = io.derive_run_id("search", {"b": 1, "a": [1, 2]})
    assert a == io.derive_run_id("search", {"a": [1, 2], "b": 1})
    assert a != io.derive_run_id("search", {"a": [1, 2], "b": 2})
    assert a.startswith("search-")


def test_manifest_written_on_open_and_finish(tmp_path):
    run = make_run(tmp_path)
    m = io.read_manifest(run.path)
    assert m.run_id == "search-test" and m.finished is None and m.machine["peak_flops"] == 1.28e11
    run.finish(samples=3)
    m = io.read_manifest(run.path)
    assert m.finished is not None and m.summary == {"samples": 3}
    assert not (run.path / "manifest.json.tmp").exists()


def test_corrupt_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(io.CorruptFileError):
        io.read_manifest(tmp_path)


def test_verdict_csv_round_trip(tmp_path):
    vs = [verdict(), verdict((120, 900, 800), (1.0, 1.1, 1.2, 1.3, 0.5))]
    path = tmp_path / "v.csv"
    io.write_verdicts(path, vs, AATB, "r1")
    back = io.read_verdicts(path)
    assert back == [io.quantized(v) for v in vs]
    assert back[0].is_anomaly and back[0].cheapest_ids == {1, 2}
    rows = io.read_csv(path)
    assert all(rec["run_id"] == "r1" for _, rec in rows)
    assert list(rows[0][1])[:4] == ["kind", "d0", "d1", "d2"]


def test_verdict_json_round_trip(tmp_path):
    vs = [verdict()]
    io.write_verdicts_json(tmp_path / "v.json", vs, "r1")
    assert io.read_verdicts_json(tmp_path / "v.json") == vs
    assert json.loads((tmp_path / "v.json").read_text())["run_id"] == "r1"


@given(st.floats(1e-9, 1e3), st.floats(1e-9, 1e3))
def test_quantized_is_what_reads_back(t1, t2):
    v = classify([(1, 10, t1, None), (2, 20, t2, None)], Thresholds(0.0), Instance(AATB, (5, 6, 7)))
    row = io.verdict_row(v, "r")
    rec = dict(zip(io.verdict_header(AATB), row))
    back = io._parse_verdict({k: rec.get(k, "") for k in rec})
    assert back.per_algorithm == io.quantized(v).per_algorithm
    assert back.time_score == v.time_score


@pytest.mark.parametrize("mutate,row", [
    (lambda lines: lines[:2] + [lines[2].replace("true", "maybe")] + lines[3:], 3),
    (lambda lines: lines[:1] + [lines[1] + ",extra"] + lines[2:], 2),
    (lambda lines: lines[:2] + [lines[2].replace("aatb", "nope", 1)] + lines[3:], 3),
])
def test_corrupt_verdict_rows_report_row_number(tmp_path, mutate, row):
    path = tmp_path / "v.csv"
    io.write_verdicts(path, [verdict(), verdict()], AATB, "r")
    lines = path.read_text().splitlines()
    path.write_text("\n".join(mutate(lines)) + "\n")
    with pytest.raises(io.CorruptFileError) as info:
        io.read_verdicts(path)
    assert info.value.row == row and f"row {row}" in str(info.value)


def test_missing_header_and_columns(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(io.CorruptFileError, match="row 1"):
        io.read_verdicts(p)
    p.write_text("kind,d0\n")
    with pytest.raises(io.CorruptFileError, match="missing columns"):
        io.read_verdicts(p)


def test_region_round_trip_and_thickness_check(tmp_path):
    o = Instance(AATB, (500, 350, 1000))
    regions = [Region(o, 1, 290, 400, holes=(310, 320)), Region(o, 0, 20, 1200, (), True, True)]
    p = tmp_path / "r.csv"
    io.write_regions(p, regions, AATB, "r")
    assert io.read_regions(p) == regions
    text = p.read_text().replace(",1179,", ",1181,")
    p.write_text(text)
    with pytest.raises(io.CorruptFileError, match="row 3"):
        io.read_regions(p)


def test_lines_round_trip(tmp_path):
    fast = KernelCurve.constant(0.9)
    profile = EfficiencyProfile(gemm=fast, symm=fast,
                                syrk=KernelCurve(0.3, 1e-12, steps=((400, 0.9),)))
    h = Harness(AATB, SyntheticBackend(profile), MeasurementProtocol(repetitions=1),
                MachineConfig(peak_flops=1e9))
    line = traverse_line(Instance(AATB, (500, 350, 1000)), 1, SearchSpace.box(3), h, Thresholds(0.05))
    run = make_run(tmp_path, "explore")
    io.write_lines(run, [io.Line(0, 1, line.positions, line.samples)], AATB)
    (back,) = io.read_lines(run.path)
    assert back.positions == line.positions
    for a, b in zip(back.samples, line.samples):
        assert a.verdict == io.quantized(b.verdict)
        for ta, tb in zip(a.timings, b.timings):
            assert ta.algorithm_id == tb.algorithm_id
            assert len(ta.steps) == len(tb.steps)
            assert [s.flops for s in ta.steps] == [s.flops for s in tb.steps]
            assert [s.efficiency for s in ta.steps] == pytest.approx([s.efficiency for s in tb.steps],
                                                                     rel=1e-8)
    for name in ("samples.csv", "lines.csv", "steps.csv"):
        assert all(rec["run_id"] == "explore-test" for _, rec in io.read_csv(run.path / name))


def test_confusion_round_trip(tmp_path):
    cm = ConfusionMatrix(tn=7202, fp=656, fn=1290, tp=15839)
    io.write_confusion(tmp_path / "c.csv", cm, metrics(cm), CHAIN4, "r")
    assert io.read_confusion(tmp_path / "c.csv") == cm
    (_, rec), = io.read_csv(tmp_path / "c.csv")
    assert float(rec["recall"]) == 15839 / 17129 and rec["total"] == "24987"
    empty = ConfusionMatrix(tn=3)
    io.write_confusion(tmp_path / "e.csv", empty, metrics(empty), CHAIN4, "r")
    (_, rec), = io.read_csv(tmp_path / "e.csv")
    assert rec["recall"] == "" and rec["precision"] == ""
