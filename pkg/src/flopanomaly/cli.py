"""``flopanomaly`` command line: bench, search, explore, predict, report.

Exit codes: 0 success, 1 usage/configuration error, 2 backend failure,
3 I/O error (missing or corrupt files).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import persistence as io
from .anomaly import reclassify
from .config import Config
from .execution import (
    ConfigError,
    KernelError,
    measure_call_isolated,
    make_backend,
)
from .experiments import (
    Harness,
    OriginNotAnomalous,
    explore_regions,
    predict_from_benchmarks,
    random_search,
)
from .expr import ExpressionKind, Kernel, Step
from .metrics import confusion, metrics
from .plots import emit_efficiency_lines, emit_scatter, emit_thickness_histogram, write_series

log = logging.getLogger("flopanomaly")

EXIT_OK, EXIT_USAGE, EXIT_BACKEND, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config value, e.g. --set protocol.repetitions=3")
    p.add_argument("--expression", help="chain4 | aatb | chainN")
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", choices=["synthetic", "blas"])
    p.add_argument("--repetitions", type=int)
    p.add_argument("--out", dest="output_dir", help="output root directory (default: runs)")
    p.add_argument("--run-id")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flopanomaly", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bench", help="efficiency of isolated square kernel calls")
    _common(p)
    p.add_argument("--sizes", type=int, nargs="*", help="square sizes to sweep")

    p = sub.add_parser("search", help="random search for anomalies")
    _common(p)
    p.add_argument("--target", type=int, help="distinct anomalies to find")
    p.add_argument("--max-samples", type=int)
    p.add_argument("--threshold", type=float, help="time-score threshold")

    p = sub.add_parser("explore", help="axis-aligned lines through anomalies")
    _common(p)
    p.add_argument("anomalies_file", type=Path)
    p.add_argument("--threshold", type=float, help="time-score threshold for traversal")
    p.add_argument("--limit", type=int, help="explore only the first N anomalies")
    p.add_argument("--overshoot", type=int)

    p = sub.add_parser("predict", help="predict anomalies from isolated call benchmarks")
    _common(p)
    p.add_argument("samples_file", type=Path)
    p.add_argument("--threshold", type=float, help="time-score threshold for prediction")

    p = sub.add_parser("report", help="write plot data for a run directory")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--bin-width", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config_from_args(args) -> Config:
    over: list = list(args.overrides)
    flat = {
        "expression": args.expression,
        "seed": args.seed,
        "output_dir": args.output_dir,
        "run_id": args.run_id,
    }
    for k, v in flat.items():
        if v is not None:
            over.append({k: v})
    if args.backend:
        over.append({"backend": {"name": args.backend}})
    if args.repetitions is not None:
        over.append({"protocol": {"repetitions": args.repetitions}})
    threshold_key = {"search": "search", "explore": "traversal", "predict": "prediction"}
    if getattr(args, "threshold", None) is not None:
        over.append({"thresholds": {threshold_key[args.command]: args.threshold}})
    if getattr(args, "target", None) is not None:
        over.append({"search": {"target_anomalies": args.target}})
    if getattr(args, "max_samples", None) is not None:
        over.append({"search": {"max_samples": args.max_samples}})
    if getattr(args, "limit", None) is not None:
        over.append({"explore": {"limit": args.limit}})
    if getattr(args, "overshoot", None) is not None:
        over.append({"explore": {"overshoot": args.overshoot}})
    if getattr(args, "sizes", None) is not None:
        over.append({"bench": {"sizes": args.sizes}})
    if args.config is not None and not args.config.exists():
        raise FileNotFoundError(f"config file not found: {args.config}")
    return Config.load(args.config, over)


def _open_run(command: str, cfg: Config, input_file: Path | None = None) -> io.RunDir:
    fingerprint = cfg.fingerprint()
    if input_file is not None:
        fingerprint["input_sha256"] = io.sha256_file(input_file)
    run_id = cfg.data["run_id"] or io.derive_run_id(command, fingerprint)
    manifest = io.RunManifest.create(run_id, command, cfg.data, cfg.seed, cfg.machine)
    if input_file is not None:
        manifest.summary["input_file"] = str(input_file)
        manifest.summary["input_sha256"] = fingerprint["input_sha256"]
    return io.RunDir(Path(cfg.data["output_dir"]), manifest).open()


def _harness(cfg: Config, kind: ExpressionKind | None = None) -> Harness:
    backend = make_backend(cfg.backend_name, cfg.profile, seed=cfg.seed,
                           thread_count=cfg.machine.thread_count)
    return Harness(kind or cfg.kind, backend, cfg.protocol, cfg.machine)


def _square_step(kernel: str, size: int) -> Step:
    k = Kernel(kernel)
    if k is Kernel.GEMM:
        return Step(k, m=size, n=size, k=size)
    if k is Kernel.SYRK:
        return Step(k, m=size, k=size)
    if k is Kernel.SYMM:
        return Step(k, m=size, n=size)
    raise UsageError(f"cannot benchmark kernel {kernel!r}")


def cmd_bench(cfg: Config) -> int:
    sizes = cfg.data["bench"]["sizes"]
    if not sizes:
        raise UsageError("bench needs at least one size")
    steps = [_square_step(k, int(s)) for k in cfg.data["bench"]["kernels"] for s in sizes]
    harness = _harness(cfg)
    run = _open_run("bench", cfg)
    rows = []
    for step in steps:
        t = measure_call_isolated(harness.backend, step, cfg.protocol, cfg.machine)
        rows.append([step.kernel.value, step.m, step.n if step.n is not None else "",
                     step.k if step.k is not None else "", t.flops, io.fmt_seconds(t.median_seconds),
                     io.fmt_seconds(t.efficiency), ";".join(t.flags), run.manifest.run_id])
        log.info("%s %s: efficiency %.3f", step.kernel.value, step.m, t.efficiency)
    io.write_csv(run.file("bench.csv"), io.BENCH_HEADER, rows)
    run.finish(calls=len(rows))
    print(run.path)
    return EXIT_OK


def cmd_search(cfg: Config) -> int:
    kind = cfg.kind
    harness = _harness(cfg)
    run = _open_run("search", cfg)
    res = random_search(kind, cfg.space, cfg.search_config, harness)
    rid = run.manifest.run_id
    io.write_verdicts(run.file("samples.csv"), [s.verdict for s in res.samples], kind, rid)
    io.write_verdicts(run.file("anomalies.csv"), [s.verdict for s in res.anomalies], kind, rid)
    io.write_verdicts_json(run.file("anomalies.json"), [s.verdict for s in res.anomalies], rid)
    run.finish(samples=res.sample_count, anomalies=len(res.anomalies),
               abundance=res.abundance, partial=res.partial)
    print(f"{run.path}: {len(res.anomalies)} anomalies in {res.sample_count} samples "
          f"(abundance {res.abundance:.4f}){' [partial]' if res.partial else ''}")
    return EXIT_OK


def cmd_explore(cfg: Config, anomalies_file: Path) -> int:
    verdicts = io.read_verdicts(anomalies_file)
    limit = cfg.data["explore"]["limit"]
    if limit is not None:
        verdicts = verdicts[: int(limit)]
    kind = verdicts[0].instance.kind if verdicts else cfg.kind
    if kind != cfg.kind:
        log.warning("anomalies file holds %s instances; config says %s", kind, cfg.kind)
        cfg = cfg.with_overrides({"expression": str(kind)})
    harness = _harness(cfg, kind)
    run = _open_run("explore", cfg, anomalies_file)
    run.manifest.notes.append(
        f"traversal overshoot = {cfg.data['explore']['overshoot']} samples past a region end"
    )
    thresholds = cfg.thresholds("traversal")
    regions, lines, skipped = [], [], 0
    for v in verdicts:
        try:
            results = explore_regions(v, cfg.space, harness, thresholds,
                                      int(cfg.data["explore"]["overshoot"]))
        except OriginNotAnomalous as exc:
            log.warning("%s; skipped", exc)
            skipped += 1
            continue
        for r in results:
            lines.append(io.Line(len(lines), r.region.dimension_index, r.positions, r.samples))
            regions.append(r.region)
    rid = run.manifest.run_id
    io.write_regions(run.file("regions.csv"), regions, kind, rid)
    io.write_lines(run, lines, kind)
    run.finish(anomalies=len(verdicts), regions=len(regions), skipped=skipped,
               line_samples=sum(len(l.samples) for l in lines))
    print(f"{run.path}: {len(regions)} regions ({skipped} origins skipped)")
    return EXIT_OK


def cmd_predict(cfg: Config, samples_file: Path) -> int:
    stored = io.read_verdicts(samples_file)
    kind = stored[0].instance.kind if stored else cfg.kind
    if kind != cfg.kind:
        cfg = cfg.with_overrides({"expression": str(kind)})
    thresholds = cfg.thresholds("prediction")
    actual = [reclassify(v, thresholds) for v in stored]
    harness = _harness(cfg, kind)
    run = _open_run("predict", cfg, samples_file)
    pred = predict_from_benchmarks([v.instance for v in actual], harness, thresholds,
                                   quantize_digits=9)
    cm = confusion([v.is_anomaly for v in actual], [v.is_anomaly for v in pred.verdicts])
    m = metrics(cm)
    rid = run.manifest.run_id
    io.write_predictions(run.file("predictions.csv"), actual, pred.verdicts, kind, rid)
    io.write_confusion(run.file("confusion.csv"), cm, m, kind, rid)
    run.finish(rows=len(actual), benchmarked_calls=len(pred.benchmarks), tn=cm.tn, fp=cm.fp,
               fn=cm.fn, tp=cm.tp, recall=m.recall, precision=m.precision)
    print(f"{run.path}: tn={cm.tn} fp={cm.fp} fn={cm.fn} tp={cm.tp} "
          f"recall={m.recall} precision={m.precision}")
    return EXIT_OK


def cmd_report(run_dir: Path, bin_width: int | None = None) -> int:
    run_dir = Path(run_dir)
    manifest = io.read_manifest(run_dir)
    cfg = Config.load(None, [{k: v for k, v in manifest.config.items()}])
    kind = cfg.kind
    width = bin_width or int(cfg.data["report"]["histogram_bin_width"])
    plots = run_dir / "plots"
    plots.mkdir(exist_ok=True)
    written = []

    anomalies = io.read_verdicts(run_dir / "anomalies.csv") if (run_dir / "anomalies.csv").exists() else []
    write_series(plots / "scatter.csv", [emit_scatter(anomalies)])
    written.append("scatter.csv")

    regions = io.read_regions(run_dir / "regions.csv") if (run_dir / "regions.csv").exists() else []
    for d in range(kind.ndims):
        name = f"thickness_d{d}.csv"
        write_series(plots / name, [emit_thickness_histogram(regions, d, width)])
        written.append(name)

    if (run_dir / "lines.csv").exists():
        for line in io.read_lines(run_dir):
            per_alg = emit_efficiency_lines(line.positions, line.samples)
            name = f"efficiency_line{line.line_id}.csv"
            write_series(plots / name, [s for series in per_alg.values() for s in series],
                         ("position", "efficiency"))
            written.append(name)
    print(f"{plots}: {len(written)} files")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.run_dir, args.bin_width)
        cfg = _config_from_args(args)
        if args.command == "bench":
            return cmd_bench(cfg)
        if args.command == "search":
            return cmd_search(cfg)
        if args.command == "explore":
            return cmd_explore(cfg, args.anomalies_file)
        return cmd_predict(cfg, args.samples_file)
    except (UsageError, ConfigError) as exc:
        print(f"flopanomaly: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KernelError, ImportError) as exc:
        print(f"flopanomaly: backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as exc:
        print(f"flopanomaly: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
