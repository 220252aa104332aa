"""Overall FLOP Utilization from counter telemetry.

The per-sample metric is the product of two hardware counters:

    ofu = tensor_active * sm_clock_mhz / f_max_mhz

``tensor_active`` is the fraction of cycles spent executing tensor-pipe
instructions, already averaged by the hardware over the collection
window; the SM clock is an instantaneous point sample.  Dividing the
clock by the precision's maximum tensor clock converts the cycle-domain
activity ratio into a time-domain throughput ratio.

A clock sample above the declared maximum is not clamped - it usually
means the architecture database is wrong for this GPU, and hiding that
would defeat the audit.  The point carries a warning flag instead.
"""

from __future__ import annotations

import math
import statistics
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from .archdb import Precision
from .errors import EmptyMix, EmptyWindow, NonPositivePeak

__all__ = [
    "CounterSample",
    "OfuPoint",
    "PrecisionFlops",
    "JobAggregate",
    "ofu_point",
    "aggregate_job",
    "merge_aggregates",
    "effective_peak",
    "app_mfu",
    "COLLECTION_INTERVAL_LIMIT_S",
]

# The hardware averages tensor activity over at most this long; coarser
# collection turns the reading into an average of averages.
COLLECTION_INTERVAL_LIMIT_S = 30.0


@dataclass(frozen=True)
class CounterSample:
    """One (tensor activity, SM clock) reading for one GPU."""

    timestamp: float
    gpu_id: str
    tensor_active: float
    sm_clock_mhz: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.tensor_active <= 1.0:
            raise ValueError(f"tensor_active must be in [0, 1], got {self.tensor_active}")
        if self.sm_clock_mhz <= 0:
            raise ValueError(f"sm_clock_mhz must be > 0, got {self.sm_clock_mhz}")


@dataclass(frozen=True)
class OfuPoint:
    timestamp: float
    gpu_id: str
    ofu: float
    clock_above_max: bool = False


@dataclass(frozen=True)
class PrecisionFlops:
    """FLOPs executed at one precision and that precision's peak rate."""

    precision: Precision
    flops: float
    peak_tflops: float

    def __post_init__(self) -> None:
        if self.flops < 0:
            raise ValueError("flops must be >= 0")
        if self.peak_tflops <= 0:
            raise ValueError("peak_tflops must be > 0")


@dataclass(frozen=True)
class JobAggregate:
    """Mean utilization of one job over a time window and GPU set."""

    job_id: str
    gpu_count: int
    window_start: float
    window_end: float
    mean_ofu: float
    sample_count: int
    collection_interval_s: float | None
    per_gpu_mean: dict[str, float] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()


def ofu_point(sample: CounterSample, f_max_mhz: float) -> OfuPoint:
    """Convert one counter sample into a utilization point.

    Total on valid inputs; flags (but does not clamp) clock samples
    above ``f_max_mhz``.
    """
    if f_max_mhz <= 0:
        raise NonPositivePeak(f"f_max_mhz must be > 0, got {f_max_mhz}")
    return OfuPoint(
        timestamp=sample.timestamp,
        gpu_id=sample.gpu_id,
        ofu=sample.tensor_active * sample.sm_clock_mhz / f_max_mhz,
        clock_above_max=sample.sm_clock_mhz > f_max_mhz,
    )


def aggregate_job(
    points: Iterable[OfuPoint],
    window: tuple[float, float],
    gpu_set: frozenset[str] | set[str] | None = None,
    job_id: str = "job",
) -> JobAggregate:
    """Pool utilization points into one job-level mean.

    Retains points with ``start <= timestamp < end`` whose GPU is in
    ``gpu_set`` (empty or None means all GPUs), then takes the plain
    arithmetic mean over every retained point - all GPUs and timestamps
    weighted equally.  Per-GPU means are also reported so cross-GPU skew
    stays visible.

    The collection interval is inferred as the median inter-sample gap
    per GPU (median across GPUs); a warning is attached when it exceeds
    the 30 s hardware averaging window.

    Raises EmptyWindow when nothing is retained.
    """
    start, end = window
    if not end > start:
        raise EmptyWindow(f"window end must be after start, got [{start}, {end})")
    keep_all = not gpu_set
    by_gpu: dict[str, list[OfuPoint]] = {}
    for point in points:
        if start <= point.timestamp < end and (keep_all or point.gpu_id in gpu_set):
            by_gpu.setdefault(point.gpu_id, []).append(point)
    if not by_gpu:
        raise EmptyWindow(f"no samples retained in [{start}, {end})")

    warnings: list[str] = []
    flagged = sum(p.clock_above_max for pts in by_gpu.values() for p in pts)
    if flagged:
        warnings.append(f"{flagged} samples had SM clock above the declared maximum")

    # Shifted summation: a constant stream's mean is bit-equal to the
    # constant, so zero-noise pipelines reproduce exactly.
    shift = next(iter(by_gpu.values()))[0].ofu
    deviation_total = 0.0
    count = 0
    per_gpu_mean: dict[str, float] = {}
    gap_medians: list[float] = []
    for gpu_id in sorted(by_gpu):
        pts = sorted(by_gpu[gpu_id], key=lambda p: p.timestamp)
        deviations = math.fsum(p.ofu - shift for p in pts)
        per_gpu_mean[gpu_id] = shift + deviations / len(pts)
        deviation_total += deviations
        count += len(pts)
        gaps = [b.timestamp - a.timestamp for a, b in zip(pts, pts[1:])]
        if gaps:
            gap_medians.append(statistics.median(gaps))
    interval = statistics.median(gap_medians) if gap_medians else None
    if interval is not None and interval > COLLECTION_INTERVAL_LIMIT_S:
        warnings.append(
            f"inferred collection interval {interval:.1f} s exceeds the "
            f"{COLLECTION_INTERVAL_LIMIT_S:.0f} s hardware averaging window; "
            "readings are averages of averages"
        )

    return JobAggregate(
        job_id=job_id,
        gpu_count=len(by_gpu),
        window_start=start,
        window_end=end,
        mean_ofu=shift + deviation_total / count,
        sample_count=count,
        collection_interval_s=interval,
        per_gpu_mean=per_gpu_mean,
        warnings=tuple(warnings),
    )


def merge_aggregates(left: JobAggregate, right: JobAggregate) -> JobAggregate:
    """Count-weighted mean merge of two disjoint aggregates (commutative)."""
    count = left.sample_count + right.sample_count
    mean = (
        left.mean_ofu * left.sample_count + right.mean_ofu * right.sample_count
    ) / count
    gpus = set(left.per_gpu_mean) | set(right.per_gpu_mean)
    return JobAggregate(
        job_id=left.job_id,
        gpu_count=len(gpus) if gpus else max(left.gpu_count, right.gpu_count),
        window_start=min(left.window_start, right.window_start),
        window_end=max(left.window_end, right.window_end),
        mean_ofu=mean,
        sample_count=count,
        collection_interval_s=left.collection_interval_s,
        per_gpu_mean={},
        warnings=tuple(dict.fromkeys(left.warnings + right.warnings)),
    )


def effective_peak(mix: Sequence[PrecisionFlops]) -> float:
    """FLOPs-weighted harmonic mean of per-precision peaks, in TFLOP/s.

    This is the correct single denominator for a job that mixes numeric
    formats: peak_eff = sum(F_i) / sum(F_i / P_i).
    """
    total = sum(entry.flops for entry in mix)
    if total <= 0:
        raise EmptyMix("precision mix has no positive FLOPs entry")
    weighted = sum(entry.flops / entry.peak_tflops for entry in mix)
    return total / weighted


def app_mfu(
    achieved_tflops_total: float, gpu_count: int, peak_per_gpu_tflops: float
) -> float:
    """Application-level MFU percentage.

    Total achieved TFLOP/s across the job divided by the aggregate peak
    (gpu_count x per-GPU peak), as a percentage.
    """
    if peak_per_gpu_tflops <= 0:
        raise NonPositivePeak(f"peak must be > 0, got {peak_per_gpu_tflops}")
    if gpu_count < 1:
        raise ValueError(f"gpu_count must be >= 1, got {gpu_count}")
    return achieved_tflops_total / (gpu_count * peak_per_gpu_tflops) * 100.0
