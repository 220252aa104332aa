"""Counter-telemetry ingestion: CSV traces and Prometheus text scrapes.

Two source formats produce the same validated sample stream:

* CSV with header ``timestamp,gpu_id,tensor_active,sm_clock_mhz`` - the
  package's canonical trace format (also what the simulator writes).
  Activity is a strict fraction in [0, 1].
* A subset of the Prometheus text exposition format as emitted by DCGM
  exporters: ``NAME{label="v",...} VALUE [TIMESTAMP_MS]`` lines, with
  ``#`` comment lines ignored.  Activity and clock gauges are paired by
  (GPU label, timestamp); exporters disagree about percent-vs-fraction
  units, so activity values in (1, 100] are rescaled by 1/100 with a
  warning.

Both parsers are total: arbitrary input produces samples plus
diagnostics, never an uncontrolled crash.  Every input record ends up
retained, rejected (malformed) or dropped (unpairable), so the three
counters always sum to the record total.
"""

from __future__ import annotations

import csv
import io
import math
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

from .errors import MalformedRow, MissingHeader, ParseError
from .metric import CounterSample

__all__ = [
    "JobWindow",
    "TraceSource",
    "Diagnostic",
    "ParseResult",
    "parse_csv",
    "parse_prometheus_text",
    "align_to_window",
    "write_trace_csv",
    "read_window_file",
    "CSV_HEADER",
    "DEFAULT_ACTIVITY_METRIC",
    "DEFAULT_CLOCK_METRIC",
    "DEFAULT_GPU_LABEL",
    "PAIRING_TOLERANCE_S",
]

CSV_HEADER = ("timestamp", "gpu_id", "tensor_active", "sm_clock_mhz")
DEFAULT_ACTIVITY_METRIC = "DCGM_FI_PROF_PIPE_TENSOR_ACTIVE"
DEFAULT_CLOCK_METRIC = "DCGM_FI_DEV_SM_CLOCK"
DEFAULT_GPU_LABEL = "gpu"
# Activity and clock scrapes are near-simultaneous but not identical.
PAIRING_TOLERANCE_S = 1.0


@dataclass(frozen=True)
class JobWindow:
    """Half-open training window [start, end) for a set of GPUs."""

    job_id: str
    start: float
    end: float
    gpu_ids: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.end > self.start:
            raise ValueError(f"window end must be after start, got [{self.start}, {self.end})")


@dataclass(frozen=True)
class TraceSource:
    """Where a trace lives and which metric names identify the counters."""

    kind: str  # "csv" | "prometheus_text"
    location: str | Path | TextIO
    activity_metric_name: str = DEFAULT_ACTIVITY_METRIC
    clock_metric_name: str = DEFAULT_CLOCK_METRIC
    gpu_label: str = DEFAULT_GPU_LABEL

    def __post_init__(self) -> None:
        if not self.activity_metric_name or not self.clock_metric_name:
            raise ValueError("metric names must be nonempty")


@dataclass(frozen=True)
class Diagnostic:
    kind: str
    message: str
    line: int | None = None
    byte_offset: int | None = None


@dataclass
class ParseResult:
    """Samples plus per-record accounting.

    ``retained + rejected + dropped == total_records`` always holds.
    For CSV each retained record is one sample; for Prometheus text a
    sample consumes two records (one activity line, one clock line).
    Comment lines and metrics other than the two tracked ones are not
    records; they appear in ``ignored``.
    """

    samples: list[CounterSample] = field(default_factory=list)
    diagnostics: list[Diagnostic] = field(default_factory=list)
    total_records: int = 0
    retained: int = 0
    rejected: int = 0
    dropped: int = 0
    ignored: int = 0


def _as_text_stream(location: str | Path | TextIO) -> tuple[TextIO, bool]:
    if isinstance(location, (str, Path)):
        return open(location, "r", encoding="utf-8", newline=""), True
    return location, False


# --- CSV ----------------------------------------------------------------


def parse_csv(
    source: TraceSource | str | Path | TextIO, strict: bool = False
) -> ParseResult:
    """Parse a canonical CSV trace.

    Rows that violate the sample constraints are rejected with a
    line-numbered diagnostic (or raised as MalformedRow under
    ``strict``); out-of-order timestamps within one GPU are retained but
    flagged.  A missing or wrong header is always fatal.
    """
    location = source.location if isinstance(source, TraceSource) else source
    stream, owned = _as_text_stream(location)
    try:
        return _parse_csv_stream(stream, strict=strict)
    finally:
        if owned:
            stream.close()


def _parse_csv_stream(stream: TextIO, strict: bool) -> ParseResult:
    result = ParseResult()
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise MissingHeader("trace is empty; expected header " + ",".join(CSV_HEADER))
    except csv.Error as exc:
        raise MissingHeader(f"unreadable header row: {exc}")
    normalized = tuple(cell.strip().lstrip("﻿").lower() for cell in header)
    if normalized != CSV_HEADER:
        raise MissingHeader(
            f"expected header {','.join(CSV_HEADER)!r}, got {','.join(header)!r}"
        )

    last_seen: dict[str, float] = {}
    while True:
        try:
            row = next(reader)
            line = reader.line_num
        except StopIteration:
            break
        except csv.Error as exc:
            result.total_records += 1
            _reject_row(result, reader.line_num, f"unparseable CSV row: {exc}", strict)
            continue
        if not row or all(not cell.strip() for cell in row):
            continue  # blank line, not a record
        result.total_records += 1
        reason = None
        sample = None
        if len(row) != 4:
            reason = f"expected 4 fields, got {len(row)}"
        else:
            try:
                timestamp = float(row[0])
                gpu_id = row[1].strip()
                activity = float(row[2])
                clock = float(row[3])
            except ValueError:
                reason = f"non-numeric field in {row!r}"
            else:
                if not gpu_id:
                    reason = "empty gpu_id"
                elif not all(math.isfinite(v) for v in (timestamp, activity, clock)):
                    reason = "non-finite value"
                elif not 0.0 <= activity <= 1.0:
                    reason = f"tensor_active {activity} outside [0, 1]"
                elif clock <= 0:
                    reason = f"sm_clock_mhz {clock} not > 0"
                else:
                    sample = CounterSample(timestamp, gpu_id, activity, clock)
        if sample is None:
            _reject_row(result, line, reason or "invalid row", strict)
            continue
        if sample.gpu_id in last_seen and sample.timestamp < last_seen[sample.gpu_id]:
            result.diagnostics.append(
                Diagnostic(
                    kind="out_of_order",
                    message=f"timestamp {sample.timestamp} before previous "
                    f"{last_seen[sample.gpu_id]} for {sample.gpu_id}",
                    line=line,
                )
            )
        last_seen[sample.gpu_id] = max(sample.timestamp, last_seen.get(sample.gpu_id, -math.inf))
        result.samples.append(sample)
        result.retained += 1
    return result


def _reject_row(result: ParseResult, line: int, reason: str, strict: bool) -> None:
    if strict:
        raise MalformedRow(f"line {line}: {reason}")
    result.rejected += 1
    result.diagnostics.append(Diagnostic(kind="malformed_row", message=reason, line=line))


def write_trace_csv(samples: Iterable[CounterSample], dest: str | Path | TextIO) -> None:
    """Write samples in the canonical CSV format (value-lossless)."""
    stream, owned = (
        (open(dest, "w", encoding="utf-8", newline=""), True)
        if isinstance(dest, (str, Path))
        else (dest, False)
    )
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for s in samples:
            writer.writerow([repr(s.timestamp), s.gpu_id, repr(s.tensor_active), repr(s.sm_clock_mhz)])
    finally:
        if owned:
            stream.close()


# --- Prometheus text exposition ------------------------------------------

_METRIC_LINE_RE = re.compile(
    r"^(?P<name>[a-zA-Z_:][a-zA-Z0-9_:]*)"
    r"(?:\{(?P<labels>[^}]*)\})?"
    r"\s+(?P<value>\S+)"
    r"(?:\s+(?P<ts>-?\d+))?\s*$"
)
_LABEL_RE = re.compile(r'([a-zA-Z_][a-zA-Z0-9_]*)\s*=\s*"((?:\\.|[^"\\])*)"')


def parse_prometheus_text(
    source: TraceSource | str | Path | TextIO,
    activity_metric: str | None = None,
    clock_metric: str | None = None,
    gpu_label: str | None = None,
    strict: bool = False,
) -> ParseResult:
    """Parse a Prometheus text scrape into paired counter samples.

    Activity and clock gauges pair when their GPU label matches and
    their timestamps differ by at most one second; the sample takes the
    activity line's timestamp (the averaged counter).  Tracked lines
    that never find a partner are dropped with an ``unpaired_sample``
    diagnostic.
    """
    if isinstance(source, TraceSource):
        activity_metric = activity_metric or source.activity_metric_name
        clock_metric = clock_metric or source.clock_metric_name
        gpu_label = gpu_label or source.gpu_label
        location = source.location
    else:
        location = source
    activity_metric = activity_metric or DEFAULT_ACTIVITY_METRIC
    clock_metric = clock_metric or DEFAULT_CLOCK_METRIC
    gpu_label = gpu_label or DEFAULT_GPU_LABEL

    stream, owned = _as_text_stream(location)
    try:
        text = stream.read()
    finally:
        if owned:
            stream.close()

    result = ParseResult()
    # (gpu -> [(timestamp_s, value, record_no)]) for each tracked metric
    activities: dict[str, list[tuple[float, float, int]]] = {}
    clocks: dict[str, list[tuple[float, float, int]]] = {}

    offset = 0
    record_no = 0
    for raw_line in text.splitlines(keepends=True):
        line_offset = offset
        offset += len(raw_line.encode("utf-8", errors="surrogateescape"))
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue  # comments (# HELP / # TYPE) and blanks are not records
        match = _METRIC_LINE_RE.match(line)
        if match is None:
            result.total_records += 1
            record_no += 1
            _reject_prom(result, line_offset, "line does not match exposition grammar", strict)
            continue
        name = match["name"]
        if name != activity_metric and name != clock_metric:
            result.ignored += 1
            continue
        result.total_records += 1
        record_no += 1
        labels = dict(_LABEL_RE.findall(match["labels"] or ""))
        gpu = labels.get(gpu_label)
        if gpu is None:
            _reject_prom(result, line_offset, f"missing {gpu_label!r} label", strict)
            continue
        gpu = gpu.replace('\\"', '"').replace("\\\\", "\\").replace("\\n", "\n")
        try:
            value = float(match["value"])
        except ValueError:
            _reject_prom(result, line_offset, f"unparseable value {match['value']!r}", strict)
            continue
        if not math.isfinite(value):
            _reject_prom(result, line_offset, f"non-finite value {value}", strict)
            continue
        if match["ts"] is None:
            result.dropped += 1
            result.diagnostics.append(
                Diagnostic(
                    kind="unpaired_sample",
                    message=f"{name} line has no timestamp; cannot pair",
                    byte_offset=line_offset,
                )
            )
            continue
        timestamp = int(match["ts"]) / 1000.0

        if name == activity_metric:
            if 1.0 < value <= 100.0:
                result.diagnostics.append(
                    Diagnostic(
                        kind="rescaled_activity",
                        message=f"activity {value} looks like a percentage; rescaled by 1/100",
                        byte_offset=line_offset,
                    )
                )
                value /= 100.0
            if not 0.0 <= value <= 1.0:
                _reject_prom(result, line_offset, f"activity {value} outside [0, 1]", strict)
                continue
            activities.setdefault(gpu, []).append((timestamp, value, record_no))
        else:
            if value <= 0:
                _reject_prom(result, line_offset, f"clock {value} not > 0", strict)
                continue
            clocks.setdefault(gpu, []).append((timestamp, value, record_no))

    _pair_streams(result, activities, clocks)
    result.samples.sort(key=lambda s: (s.timestamp, s.gpu_id))
    return result


def _reject_prom(result: ParseResult, byte_offset: int, reason: str, strict: bool) -> None:
    if strict:
        raise ParseError(f"byte {byte_offset}: {reason}")
    result.rejected += 1
    result.diagnostics.append(
        Diagnostic(kind="parse_error", message=reason, byte_offset=byte_offset)
    )


def _pair_streams(
    result: ParseResult,
    activities: dict[str, list[tuple[float, float, int]]],
    clocks: dict[str, list[tuple[float, float, int]]],
) -> None:
    for gpu in sorted(set(activities) | set(clocks)):
        acts = sorted(activities.get(gpu, []))
        clks = sorted(clocks.get(gpu, []))
        used = [False] * len(clks)
        j = 0
        for ts, activity, _ in acts:
            while j < len(clks) and clks[j][0] < ts - PAIRING_TOLERANCE_S:
                j += 1
            # nearest unused clock within tolerance
            best = None
            for k in range(j, len(clks)):
                if clks[k][0] > ts + PAIRING_TOLERANCE_S:
                    break
                if used[k]:
                    continue
                if best is None or abs(clks[k][0] - ts) < abs(clks[best][0] - ts):
                    best = k
            if best is None:
                result.dropped += 1
                result.diagnostics.append(
                    Diagnostic(
                        kind="unpaired_sample",
                        message=f"activity at t={ts} for gpu {gpu!r} has no clock sample",
                    )
                )
                continue
            used[best] = True
            result.samples.append(CounterSample(ts, gpu, activity, clks[best][1]))
            result.retained += 2
        for k, flag in enumerate(used):
            if not flag:
                result.dropped += 1
                result.diagnostics.append(
                    Diagnostic(
                        kind="unpaired_sample",
                        message=f"clock at t={clks[k][0]} for gpu {gpu!r} has no activity sample",
                    )
                )


# --- window alignment -----------------------------------------------------


def align_to_window(
    samples: Iterable[CounterSample], window: JobWindow
) -> list[CounterSample]:
    """Keep samples inside [start, end) for the window's GPUs.

    An empty GPU set means every GPU.  Half-open on the right so that
    back-to-back windows partition a stream cleanly.
    """
    keep_all = not window.gpu_ids
    return [
        s
        for s in samples
        if window.start <= s.timestamp < window.end
        and (keep_all or s.gpu_id in window.gpu_ids)
    ]


def read_window_file(path: str | Path, job_id: str | None = None) -> JobWindow:
    """Load a window record (JSON object or list of objects) from disk."""
    import json

    data = json.loads(Path(path).read_text(encoding="utf-8"))
    records = data if isinstance(data, list) else [data]
    if not records:
        raise ParseError(f"{path}: no window records")
    chosen = None
    for record in records:
        if job_id is None or record.get("job_id") == job_id:
            chosen = record
            break
    if chosen is None:
        raise ParseError(f"{path}: no window record for job {job_id!r}")
    try:
        return JobWindow(
            job_id=str(chosen.get("job_id", "job")),
            start=float(chosen["start"]),
            end=float(chosen["end"]),
            gpu_ids=frozenset(str(g) for g in chosen.get("gpus", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: bad window record: {exc}") from None
