"""Command-line surface for the ofu toolkit.

Exit status: 0 on success, 1 on input/usage errors, 2 on internal
failures.  Machine output (--format csv/json) is value-lossless; table
output rounds for humans.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict

from . import archdb, analyze, ingest, metric, simulate, tilemodel
from .archdb import Precision
from .errors import MissingPrecision, OfuError, ParseError

# Randomized subcommands fall back to this documented seed when --seed
# is omitted, so reruns reproduce by default.
DEFAULT_SEED = 42

ARCH_DB_ENV_VAR = "OFU_ARCH_DB"


class _CliParser(argparse.ArgumentParser):
    """argparse that reports usage problems as input errors (exit 1)."""

    def error(self, message):
        raise _UsageError(f"{message}\nhint: see '{self.prog} --help'")


class _UsageError(OfuError):
    pass


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        args.handler(args)
        return 0
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OfuError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 0
    except Exception as exc:  # internal invariant failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = _CliParser(prog="ofu", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("peak", help="per-precision peak TFLOP/s for an architecture")
    _add_arch_flags(p)
    p.add_argument("--precision", help="single precision instead of the full table")
    _add_format_flag(p)
    p.set_defaults(handler=_cmd_peak)

    p = sub.add_parser("ofu", help="aggregate utilization from a counter trace")
    p.add_argument("--trace", required=True, help="trace file path")
    p.add_argument(
        "--trace-format",
        choices=("csv", "prom"),
        default="csv",
        help="csv (canonical) or prom (Prometheus text exposition)",
    )
    _add_arch_flags(p)
    p.add_argument("--precision", required=True, help="precision whose max tensor clock normalizes the metric")
    p.add_argument("--window", help="START:END seconds, or a JSON window file")
    p.add_argument("--job-id", default="job", help="job id for the report / window-file lookup")
    p.add_argument("--gpus", help="comma-separated GPU ids to keep (default: all)")
    p.add_argument("--strict", action="store_true", help="fail on the first malformed record")
    p.add_argument("--activity-metric", default=ingest.DEFAULT_ACTIVITY_METRIC)
    p.add_argument("--clock-metric", default=ingest.DEFAULT_CLOCK_METRIC)
    p.add_argument("--gpu-label", default=ingest.DEFAULT_GPU_LABEL)
    _add_format_flag(p)
    p.set_defaults(handler=_cmd_ofu)

    p = sub.add_parser("adjust", help="remove tile-padding overcount from a utilization value")
    p.add_argument("--ofu", type=float, required=True, help="utilization fraction to adjust")
    p.add_argument("--shape", required=True, help="GEMM problem as MxKxN, e.g. 4096x4096x160")
    p.add_argument("--executed-flops", type=int, help="measured executed FLOPs")
    p.add_argument("--kernel", help="nvJet kernel name to model executed FLOPs from")
    p.add_argument("--tiles", help="tile config TMxTNxTK[:CMxCN] to model executed FLOPs from")
    _add_format_flag(p)
    p.set_defaults(handler=_cmd_adjust)

    p = sub.add_parser("sweep", help="tile-padding overhead curve over square sizes")
    p.add_argument("--precision", default="FP16", help="comma-separated precision list")
    p.add_argument("--n-start", type=int, default=128)
    p.add_argument("--n-stop", type=int, default=16384)
    p.add_argument("--n-step", type=int, default=128)
    p.add_argument("--tiles", help="override tile config TMxTNxTK[:CMxCN]")
    _add_format_flag(p, default="csv")
    p.set_defaults(handler=_cmd_sweep)

    p = sub.add_parser("simulate", help="write a synthetic counter trace")
    _add_sim_flags(p)
    p.add_argument("--gpu-count", type=int, default=1)
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("study", help="clock-sampling error vs collection interval")
    _add_sim_flags(p)
    p.add_argument("--intervals", default="5,10,20,30", help="comma-separated seconds")
    p.add_argument("--f-max", type=float, required=True, help="max tensor clock MHz")
    p.add_argument("--study-seeds", type=int, default=100, help="independent runs to pool")
    _add_format_flag(p, default="csv")
    p.set_defaults(handler=_cmd_study)

    p = sub.add_parser("analyze", help="MFU-vs-OFU divergence report over a jobs file")
    p.add_argument("--jobs", required=True, help="jobs records file (CSV or JSON)")
    p.add_argument(
        "--outlier-threshold",
        type=float,
        default=analyze.DEFAULT_OUTLIER_THRESHOLD_PCT,
        help="relative-error %% above which a job is flagged",
    )
    p.add_argument("--exclude", help="comma-separated job ids to drop before scoring")
    p.add_argument("--by-scale", action="store_true", help="also group error stats by GPU count")
    _add_format_flag(p)
    p.set_defaults(handler=_cmd_analyze)

    p = sub.add_parser("parse-kernel", help="decode a GEMM kernel name")
    p.add_argument("name", help="kernel name string")
    _add_format_flag(p)
    p.set_defaults(handler=_cmd_parse_kernel)

    return parser


def _add_format_flag(p: argparse.ArgumentParser, default: str = "table") -> None:
    p.add_argument("--format", choices=("table", "csv", "json"), default=default)


def _add_arch_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--arch", required=True, help="architecture name, e.g. H100-SXM")
    p.add_argument(
        "--arch-db",
        help=f"architecture spec file overriding the built-ins (or ${ARCH_DB_ENV_VAR})",
    )


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--duration", type=float, required=True, help="total seconds")
    p.add_argument("--base-interval", type=float, default=1.0)
    p.add_argument("--tpa", type=float, help="constant tensor activity fraction")
    p.add_argument("--phases", help="workload phases as DUR:TPA,DUR:TPA,...")
    p.add_argument("--clock-mean", type=float, required=True)
    p.add_argument("--clock-std", type=float, required=True)
    p.add_argument("--clock-min", type=float, required=True)
    p.add_argument("--clock-max", type=float, required=True)
    p.add_argument("--update-hz", type=float, default=1000.0)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"default {DEFAULT_SEED}")


# --- shared helpers -------------------------------------------------------


def _load_db(args) -> dict[str, archdb.GpuArchitecture]:
    path = args.arch_db or os.environ.get(ARCH_DB_ENV_VAR)
    if not path:
        return archdb.builtin_database()
    archs = archdb.load_arch_file(path)
    return {arch.name: arch for arch in archs}


def _precision(label: str) -> Precision:
    try:
        return Precision(label.strip().upper())
    except ValueError:
        valid = ", ".join(p.value for p in Precision)
        raise _UsageError(f"--precision: unknown precision {label!r} (one of {valid})")


def _parse_shape(text: str) -> tilemodel.GemmShape:
    parts = text.lower().replace("*", "x").split("x")
    if len(parts) != 3:
        raise _UsageError(f"--shape: expected MxKxN, got {text!r}")
    try:
        m, k, n = (int(part) for part in parts)
    except ValueError:
        raise _UsageError(f"--shape: non-integer dimension in {text!r}")
    return tilemodel.GemmShape(m=m, k=k, n=n)


def _parse_tiles(text: str) -> tilemodel.TileConfig:
    tile_part, _, cluster_part = text.partition(":")
    try:
        t_m, t_n, t_k = (int(v) for v in tile_part.lower().split("x"))
        c_m, c_n = (
            (int(v) for v in cluster_part.lower().split("x")) if cluster_part else (1, 1)
        )
        return tilemodel.TileConfig(t_m=t_m, t_n=t_n, t_k=t_k, c_m=c_m, c_n=c_n)
    except ValueError:
        raise _UsageError(f"--tiles: expected TMxTNxTK[:CMxCN], got {text!r}")


def _sim_config(args) -> simulate.SimConfig:
    if args.phases:
        phases = []
        for token in args.phases.split(","):
            dur, _, tpa = token.partition(":")
            try:
                phases.append(simulate.WorkloadPhase(duration_s=float(dur), tpa=float(tpa)))
            except ValueError as exc:
                raise _UsageError(f"--phases: bad token {token!r} ({exc})")
        phases = tuple(phases)
    elif args.tpa is not None:
        phases = (simulate.WorkloadPhase(duration_s=args.duration, tpa=args.tpa),)
    else:
        raise _UsageError("one of --tpa or --phases is required")
    try:
        clock = simulate.ClockModel(
            mean_mhz=args.clock_mean,
            std_mhz=args.clock_std,
            min_mhz=args.clock_min,
            max_mhz=args.clock_max,
            update_hz=args.update_hz,
        )
        return simulate.SimConfig(
            phases=phases,
            total_duration_s=args.duration,
            clock=clock,
            seed=args.seed,
            base_interval_s=args.base_interval,
            gpu_count=getattr(args, "gpu_count", 1),
        )
    except ValueError as exc:
        raise _UsageError(str(exc))


def _emit_rows(fmt: str, headers: list[str], rows: list[list], table_fmt=None) -> None:
    if fmt == "json":
        payload = [dict(zip(headers, row)) for row in rows]
        print(json.dumps(payload, indent=2, default=str))
    elif fmt == "csv":
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(headers)
        for row in rows:
            writer.writerow([_machine_cell(cell) for cell in row])
    else:
        _print_table(headers, rows, table_fmt)


def _machine_cell(cell):
    if isinstance(cell, float):
        return repr(cell)
    return cell


def _print_table(headers, rows, table_fmt=None) -> None:
    rendered = []
    for row in rows:
        cells = []
        for i, cell in enumerate(row):
            if isinstance(cell, float):
                spec = table_fmt[i] if table_fmt and table_fmt[i] else "{:.4f}"
                cells.append(spec.format(cell))
            else:
                cells.append(str(cell))
        rendered.append(cells)
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in rendered)) if rendered else len(headers[i])
        for i in range(len(headers))
    ]
    print("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip())
    print("  ".join("-" * w for w in widths))
    for cells in rendered:
        print("  ".join(cells[i].ljust(widths[i]) for i in range(len(cells))).rstrip())


# --- subcommands ------------------------------------------------------------


def _cmd_peak(args) -> None:
    arch = archdb.get_architecture(args.arch, _load_db(args))
    peaks = archdb.datasheet_peaks(arch)
    if args.precision:
        wanted = _precision(args.precision)
        if wanted not in peaks:
            raise MissingPrecision(f"{arch.name} has no entry for {wanted}")
        peaks = {wanted: peaks[wanted]}
    rows = [[arch.name, prec.value, pk.tflops] for prec, pk in peaks.items()]
    _emit_rows(args.format, ["arch", "precision", "peak_tflops"], rows, [None, None, "{:.1f}"])


def _cmd_ofu(args) -> None:
    source = ingest.TraceSource(
        kind="csv" if args.trace_format == "csv" else "prometheus_text",
        location=args.trace,
        activity_metric_name=args.activity_metric,
        clock_metric_name=args.clock_metric,
        gpu_label=args.gpu_label,
    )
    if args.trace_format == "csv":
        result = ingest.parse_csv(source, strict=args.strict)
    else:
        result = ingest.parse_prometheus_text(source, strict=args.strict)
    samples = result.samples

    gpu_set = frozenset(g.strip() for g in args.gpus.split(",")) if args.gpus else frozenset()
    if args.window:
        window = _parse_window(args.window, args.job_id, gpu_set)
        samples = ingest.align_to_window(samples, window)
        span = (window.start, window.end)
        gpu_set = window.gpu_ids
    else:
        if not samples:
            raise ParseError(f"{args.trace}: no valid samples")
        last = max(s.timestamp for s in samples)
        span = (min(s.timestamp for s in samples), math.nextafter(last, math.inf))

    arch = archdb.get_architecture(args.arch, _load_db(args))
    prec = _precision(args.precision)
    f_max = arch.tensor_clock_mhz.get(prec)
    if f_max is None:
        raise MissingPrecision(f"{arch.name} has no tensor clock for {prec}")
    points = [metric.ofu_point(s, f_max) for s in samples]
    agg = metric.aggregate_job(points, span, gpu_set, job_id=args.job_id)

    if args.format == "json":
        payload = asdict(agg)
        payload["mean_ofu_pct"] = agg.mean_ofu * 100.0
        payload["parser"] = {
            "total_records": result.total_records,
            "retained": result.retained,
            "rejected": result.rejected,
            "dropped": result.dropped,
            "diagnostics": [asdict(d) for d in result.diagnostics],
        }
        print(json.dumps(payload, indent=2, default=str))
        return
    rows = [
        ["job_id", agg.job_id],
        ["gpu_count", agg.gpu_count],
        ["window", f"[{agg.window_start}, {agg.window_end})"],
        ["samples", agg.sample_count],
        ["mean_ofu_pct", agg.mean_ofu * 100.0],
        ["collection_interval_s", agg.collection_interval_s],
    ]
    _emit_rows(args.format, ["field", "value"], rows, [None, "{:.2f}"])
    for warning in agg.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    for diag in result.diagnostics:
        print(f"note: {diag.kind}: {diag.message}", file=sys.stderr)


def _parse_window(spec: str, job_id: str, gpu_set: frozenset[str]) -> ingest.JobWindow:
    if ":" in spec and not os.path.exists(spec):
        start_s, _, end_s = spec.partition(":")
        try:
            return ingest.JobWindow(
                job_id=job_id, start=float(start_s), end=float(end_s), gpu_ids=gpu_set
            )
        except ValueError as exc:
            raise _UsageError(f"--window: {exc}")
    return ingest.read_window_file(spec, job_id=None if job_id == "job" else job_id)


def _cmd_adjust(args) -> None:
    shape = _parse_shape(args.shape)
    modeled = None
    if args.executed_flops is not None:
        executed = args.executed_flops
        origin = "measured"
    elif args.kernel:
        descriptor = tilemodel.parse_kernel_name(args.kernel)
        if descriptor.tiles is None:
            raise ParseError(
                f"kernel {args.kernel!r} ({descriptor.family.value}) does not encode "
                "tiling geometry; pass --executed-flops from a measurement instead"
            )
        modeled = tilemodel.predict_flops(shape, descriptor.tiles)
        executed = modeled.model_flops
        origin = "modeled"
    elif args.tiles:
        modeled = tilemodel.predict_flops(shape, _parse_tiles(args.tiles))
        executed = modeled.model_flops
        origin = "modeled"
    else:
        raise _UsageError("one of --executed-flops, --kernel or --tiles is required")

    adjusted = tilemodel.adjust_ofu(args.ofu, shape, executed)
    rows = [
        ["theoretical_flops", shape.theoretical_flops],
        ["executed_flops", executed],
        ["flops_origin", origin],
        ["overhead_pct", tilemodel.overhead(shape, executed)],
        ["ofu", args.ofu],
        ["adjusted_ofu", adjusted],
    ]
    _emit_rows(args.format, ["field", "value"], rows, [None, "{:.6g}"])


def _cmd_sweep(args) -> None:
    sizes = list(range(args.n_start, args.n_stop + 1, args.n_step))
    if not sizes:
        raise _UsageError("--n-start/--n-stop/--n-step produce no sizes")
    override = _parse_tiles(args.tiles) if args.tiles else None
    rows: list[list] = []
    for label in args.precision.split(","):
        prec = _precision(label)
        for n, prec_label, pct in tilemodel.sweep_overhead(sizes, prec, override):
            rows.append([n, prec_label, pct])
    _emit_rows(args.format, ["n", "precision", "overhead_pct"], rows, [None, None, "{:.3f}"])


def _cmd_simulate(args) -> None:
    config = _sim_config(args)
    samples = simulate.simulate_counters(config)
    if args.out:
        ingest.write_trace_csv(samples, args.out)
        print(f"wrote {len(samples)} samples to {args.out}", file=sys.stderr)
    else:
        ingest.write_trace_csv(samples, sys.stdout)


def _cmd_study(args) -> None:
    config = _sim_config(args)
    try:
        intervals = [float(v) for v in args.intervals.split(",")]
    except ValueError:
        raise _UsageError(f"--intervals: expected comma-separated seconds, got {args.intervals!r}")
    results = simulate.sampling_error_study(
        config, intervals, f_max_mhz=args.f_max, n_seeds=args.study_seeds
    )
    rows = [[r.interval_s, r.sigma_pp, r.ci95_pp] for r in results]
    _emit_rows(
        args.format,
        ["interval_s", "sigma_pp", "ci95_pp"],
        rows,
        ["{:.0f}", "{:.4f}", "{:.4f}"],
    )


def _cmd_analyze(args) -> None:
    jobs = analyze.read_jobs_file(args.jobs)
    excluded = set(v.strip() for v in args.exclude.split(",")) if args.exclude else set()
    report = analyze.exclude_and_recompute(jobs, excluded, args.outlier_threshold)

    kept = [j for j in jobs if j.job_id not in excluded]
    if args.format == "json":
        payload = asdict(report)
        if args.by_scale:
            payload["by_scale"] = [asdict(g) for g in analyze.group_by_scale(kept)]
        print(json.dumps(payload, indent=2, default=str))
        return
    if args.by_scale and args.format == "csv":
        # scale-grouped machine output: one row per GPU count
        grows = [
            [g.gpu_count, g.jobs, g.mean_mfu_pct, g.std_mfu_pct, g.mean_abs_err_pp, g.std_abs_err_pp]
            for g in analyze.group_by_scale(kept)
        ]
        _emit_rows(
            "csv", ["gpus", "jobs", "mean_mfu", "std_mfu", "mean_abs_err", "std_abs_err"], grows
        )
        return

    rows = [
        ["job_count", report.job_count],
        ["pearson_r", report.pearson_r],
        ["mae_pp", report.mae_pp],
        ["within_2pp", report.bucket_le2],
        ["within_5pp", report.bucket_le5],
        ["within_10pp", report.bucket_le10],
        ["above_20pp", report.bucket_gt20],
        ["outlier_threshold_pct", report.outlier_threshold_pct],
    ]
    for job_id, rel in report.outliers:
        rows.append([f"outlier:{job_id}", rel])
    _emit_rows(args.format, ["field", "value"], rows, [None, "{:.4f}"])
    for note in report.notes:
        print(f"note: {note}", file=sys.stderr)
    if args.by_scale:
        groups = analyze.group_by_scale(kept)
        grows = [
            [g.gpu_count, g.jobs, g.mean_mfu_pct, g.std_mfu_pct, g.mean_abs_err_pp, g.std_abs_err_pp]
            for g in groups
        ]
        print()
        _emit_rows(
            args.format,
            ["gpus", "jobs", "mean_mfu", "std_mfu", "mean_abs_err", "std_abs_err"],
            grows,
            [None, None, "{:.1f}", "{:.1f}", "{:.1f}", "{:.1f}"],
        )


def _cmd_parse_kernel(args) -> None:
    descriptor = tilemodel.parse_kernel_name(args.name)
    tiles = descriptor.tiles
    rows = [
        ["name", descriptor.raw_name],
        ["family", descriptor.family.value],
        ["arch_tag", descriptor.arch_tag],
        ["precision_tag", descriptor.precision_tag],
        ["t_m", tiles.t_m if tiles else None],
        ["t_n", tiles.t_n if tiles else None],
        ["t_k", tiles.t_k if tiles else None],
        ["stages", descriptor.stages],
        ["c_m", tiles.c_m if tiles else None],
        ["c_n", tiles.c_n if tiles else None],
    ]
    if tiles is not None:
        rows.append(["geometry", tilemodel.render_geometry(descriptor)])
    _emit_rows(args.format, ["field", "value"], rows)


if __name__ == "__main__":
    sys.exit(main())
