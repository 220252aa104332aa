"""Divergence analysis between hardware-derived utilization and app MFU.

When the two metrics disagree persistently, experience says the
application's FLOPs accounting is wrong far more often than the hardware
counters are.  This module quantifies the disagreement across a fleet of
jobs (error statistics, correlation, scale grouping), flags outliers by
relative error with the hardware side as the denominator, and applies
known FLOPs-accounting correction factors so fixed jobs can be
re-scored.  Why a flagged job diverges is out of scope - that takes a
profiler.
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .archdb import Precision
from .errors import NonPositiveFactor, ParseError, ZeroReference
from .metric import PrecisionFlops

__all__ = [
    "JobRecord",
    "DivergenceReport",
    "ScaleGroup",
    "divergence_report",
    "group_by_scale",
    "ofu_derived_speedup",
    "apply_flops_correction",
    "exclude_and_recompute",
    "pearson",
    "read_jobs_file",
    "DEFAULT_OUTLIER_THRESHOLD_PCT",
]

# Chosen so broken FLOPs accounting (roughly 3x inflation shows up as
# >50% relative error) flags while healthy jobs (a few percent) pass.
DEFAULT_OUTLIER_THRESHOLD_PCT = 25.0


@dataclass(frozen=True)
class JobRecord:
    """One job's aggregate utilization pair."""

    job_id: str
    gpu_count: int
    app_mfu_pct: float
    ofu_pct: float
    precision_mix: tuple[PrecisionFlops, ...] | None = None
    user: str | None = None

    def __post_init__(self) -> None:
        if self.gpu_count < 1:
            raise ValueError("gpu_count must be >= 1")
        if self.app_mfu_pct < 0 or self.ofu_pct < 0:
            raise ValueError("utilization percentages must be >= 0")

    @property
    def abs_error_pp(self) -> float:
        return abs(self.app_mfu_pct - self.ofu_pct)


@dataclass(frozen=True)
class DivergenceReport:
    """Fleet-level agreement statistics between app MFU and OFU.

    Buckets are cumulative fractions of jobs by absolute error in
    percentage points, except ``bucket_gt20`` which counts the tail.
    ``pearson_r`` is None when undefined (fewer than two jobs, or zero
    variance); the reason lands in ``notes``.
    """

    job_count: int
    pearson_r: float | None
    mae_pp: float | None
    bucket_le2: float
    bucket_le5: float
    bucket_le10: float
    bucket_gt20: float
    outliers: tuple[tuple[str, float], ...]
    outlier_threshold_pct: float
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class ScaleGroup:
    """Error statistics for all jobs at one GPU count (population stds)."""

    gpu_count: int
    jobs: int
    mean_mfu_pct: float
    std_mfu_pct: float
    mean_abs_err_pp: float
    std_abs_err_pp: float


def pearson(xs: list[float], ys: list[float]) -> float | None:
    """Pearson correlation; None when n < 2 or either side is constant."""
    if len(xs) != len(ys):
        raise ValueError("series lengths differ")
    if len(xs) < 2:
        return None
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    dx = x - x.mean()
    dy = y - y.mean()
    denom = float(np.sqrt((dx * dx).sum() * (dy * dy).sum()))
    if denom == 0.0:
        return None
    r = float((dx * dy).sum()) / denom
    return max(-1.0, min(1.0, r))


def divergence_report(
    jobs: list[JobRecord],
    outlier_threshold_pct: float = DEFAULT_OUTLIER_THRESHOLD_PCT,
) -> DivergenceReport:
    """Score a job set: MAE, correlation, error buckets, flagged outliers.

    Relative error uses OFU (the hardware-trusted side) as denominator;
    jobs with zero OFU are skipped from the outlier scan and noted.
    An empty or single-job input still produces a report, just without
    a correlation value.
    """
    notes: list[str] = []
    n = len(jobs)
    if n == 0:
        return DivergenceReport(
            job_count=0,
            pearson_r=None,
            mae_pp=None,
            bucket_le2=0.0,
            bucket_le5=0.0,
            bucket_le10=0.0,
            bucket_gt20=0.0,
            outliers=(),
            outlier_threshold_pct=outlier_threshold_pct,
            notes=("no jobs to score",),
        )

    r = pearson([j.app_mfu_pct for j in jobs], [j.ofu_pct for j in jobs])
    if r is None:
        notes.append(
            "correlation undefined: fewer than 2 jobs"
            if n < 2
            else "correlation undefined: zero variance"
        )

    abs_errors = [j.abs_error_pp for j in jobs]
    mae = sum(abs_errors) / n

    outliers: list[tuple[str, float]] = []
    zero_ofu = 0
    for job in jobs:
        if job.ofu_pct == 0:
            zero_ofu += 1
            continue
        rel = abs(job.app_mfu_pct - job.ofu_pct) / job.ofu_pct * 100.0
        if rel > outlier_threshold_pct:
            outliers.append((job.job_id, rel))
    if zero_ofu:
        notes.append(f"{zero_ofu} job(s) skipped from outlier scan: zero OFU")
    outliers.sort(key=lambda item: (-item[1], item[0]))

    return DivergenceReport(
        job_count=n,
        pearson_r=r,
        mae_pp=mae,
        bucket_le2=sum(e <= 2.0 for e in abs_errors) / n,
        bucket_le5=sum(e <= 5.0 for e in abs_errors) / n,
        bucket_le10=sum(e <= 10.0 for e in abs_errors) / n,
        bucket_gt20=sum(e > 20.0 for e in abs_errors) / n,
        outliers=tuple(outliers),
        outlier_threshold_pct=outlier_threshold_pct,
        notes=tuple(notes),
    )


def group_by_scale(jobs: list[JobRecord]) -> list[ScaleGroup]:
    """One group per distinct GPU count, ascending."""
    by_scale: dict[int, list[JobRecord]] = {}
    for job in jobs:
        by_scale.setdefault(job.gpu_count, []).append(job)
    groups = []
    for gpu_count in sorted(by_scale):
        members = by_scale[gpu_count]
        mfus = [j.app_mfu_pct for j in members]
        errs = [j.abs_error_pp for j in members]
        groups.append(
            ScaleGroup(
                gpu_count=gpu_count,
                jobs=len(members),
                mean_mfu_pct=statistics.fmean(mfus),
                std_mfu_pct=statistics.pstdev(mfus),
                mean_abs_err_pp=statistics.fmean(errs),
                std_abs_err_pp=statistics.pstdev(errs),
            )
        )
    return groups


def ofu_derived_speedup(ofu_p, peak_p, ofu_ref, peak_ref):
    """Throughput speedup of one precision over a reference.

    Achieved throughput is utilization x peak, so the speedup is
    (ofu_p * peak_p) / (ofu_ref * peak_ref).  Pure arithmetic: feeding
    exact number types (e.g. Fraction) keeps the result exact.
    """
    if ofu_ref <= 0 or peak_ref <= 0:
        raise ZeroReference("reference utilization and peak must be > 0")
    return (ofu_p * peak_p) / (ofu_ref * peak_ref)


def apply_flops_correction(mfu_pct, factor):
    """Rescale a reported MFU after a FLOPs-accounting fix.

    ``factor`` is counted/true FLOPs: >1 means the framework inflated
    its count (corrected MFU drops); <1 means work was undercounted
    (e.g. counting 3 forward-equivalents when recomputation makes it 4,
    factor 3/4, corrected MFU rises).  A single multiply by 1/factor.
    """
    if factor <= 0:
        raise NonPositiveFactor(f"correction factor must be > 0, got {factor}")
    return mfu_pct / factor


def exclude_and_recompute(
    jobs: list[JobRecord],
    excluded_ids: set[str],
    outlier_threshold_pct: float = DEFAULT_OUTLIER_THRESHOLD_PCT,
) -> DivergenceReport:
    """Re-score the fleet without the named jobs (e.g. known-bad accounting)."""
    kept = [j for j in jobs if j.job_id not in excluded_ids]
    return divergence_report(kept, outlier_threshold_pct)


# --- job-records file -----------------------------------------------------


def read_jobs_file(path: str | Path) -> list[JobRecord]:
    """Load job records from CSV or JSON.

    CSV needs the header ``job_id,gpu_count,app_mfu_pct,ofu_pct``
    (extra ``user`` column allowed).  JSON is a list of objects with the
    same fields plus an optional ``precision_mix`` list of
    ``{precision, flops, peak_tflops}`` entries.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        return _read_jobs_json(path)
    return _read_jobs_csv(path)


def _read_jobs_csv(path: Path) -> list[JobRecord]:
    jobs = []
    with open(path, newline="", encoding="utf-8") as stream:
        reader = csv.DictReader(stream)
        required = {"job_id", "gpu_count", "app_mfu_pct", "ofu_pct"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ParseError(
                f"{path}: jobs CSV needs columns {sorted(required)}, "
                f"got {reader.fieldnames}"
            )
        for row_no, row in enumerate(reader, start=2):
            try:
                jobs.append(
                    JobRecord(
                        job_id=row["job_id"],
                        gpu_count=int(row["gpu_count"]),
                        app_mfu_pct=float(row["app_mfu_pct"]),
                        ofu_pct=float(row["ofu_pct"]),
                        user=row.get("user") or None,
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path} line {row_no}: {exc}") from None
    return jobs


def _read_jobs_json(path: Path) -> list[JobRecord]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(data, list):
        raise ParseError(f"{path}: expected a JSON list of job records")
    jobs = []
    for i, record in enumerate(data):
        try:
            mix = None
            if record.get("precision_mix"):
                mix = tuple(
                    PrecisionFlops(
                        precision=Precision(entry["precision"].upper()),
                        flops=float(entry["flops"]),
                        peak_tflops=float(entry["peak_tflops"]),
                    )
                    for entry in record["precision_mix"]
                )
            jobs.append(
                JobRecord(
                    job_id=str(record["job_id"]),
                    gpu_count=int(record["gpu_count"]),
                    app_mfu_pct=float(record["app_mfu_pct"]),
                    ofu_pct=float(record["ofu_pct"]),
                    precision_mix=mix,
                    user=record.get("user"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path} record {i}: {exc}") from None
    return jobs
