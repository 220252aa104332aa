"""Deterministic synthetic counter streams and the clock-sampling study.

The generator reproduces the one asymmetry that makes coarse telemetry
noisy: tensor activity is a true average over each collection window
(the hardware integrates it), while the SM clock is an instantaneous
point sample.  Activity follows a piecewise-constant workload-phase
schedule and is computed exactly per window; the clock is an
independent truncated-normal draw per clock update, read at the sample
instant.

Streams are pure functions of (config, seed): the same inputs produce
byte-identical output, and per-GPU streams derive their own sub-seeds so
GPUs can be generated independently.

The sampling-error study quantifies what coarser scrape intervals cost:
it generates a fine-grained baseline stream, re-estimates the mean
utilization from every phase-offset subsample at each coarser interval,
and reports the spread of the estimate error in percentage points
across offsets and seeds.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyWindow, NonMultipleInterval
from .metric import CounterSample

__all__ = [
    "ClockModel",
    "WorkloadPhase",
    "SimConfig",
    "SamplingStudyResult",
    "simulate_counters",
    "sampling_error_study",
]


@dataclass(frozen=True)
class ClockModel:
    """Stochastic SM clock: truncated-normal draws inside [min, max] MHz."""

    mean_mhz: float
    std_mhz: float
    min_mhz: float
    max_mhz: float
    update_hz: float = 1000.0

    def __post_init__(self) -> None:
        if not self.min_mhz <= self.mean_mhz <= self.max_mhz:
            raise ValueError(
                f"need min <= mean <= max, got [{self.min_mhz}, {self.max_mhz}] "
                f"around {self.mean_mhz}"
            )
        if self.std_mhz < 0:
            raise ValueError("std_mhz must be >= 0")
        if self.update_hz <= 0:
            raise ValueError("update_hz must be > 0")
        if self.min_mhz <= 0:
            raise ValueError("clock bounds must be > 0")


@dataclass(frozen=True)
class WorkloadPhase:
    """A stretch of steady tensor activity."""

    duration_s: float
    tpa: float

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("duration_s must be > 0")
        if not 0.0 <= self.tpa <= 1.0:
            raise ValueError("tpa must be in [0, 1]")


@dataclass(frozen=True)
class SimConfig:
    """One simulated run; phases cycle until the total duration is covered."""

    phases: tuple[WorkloadPhase, ...]
    total_duration_s: float
    clock: ClockModel
    seed: int
    base_interval_s: float = 1.0
    gpu_count: int = 1

    def __post_init__(self) -> None:
        if not self.phases:
            raise ValueError("need at least one workload phase")
        if self.base_interval_s <= 0:
            raise ValueError("base_interval_s must be > 0")
        if self.total_duration_s < self.base_interval_s:
            raise ValueError("total_duration_s must cover at least one interval")
        if self.gpu_count < 1:
            raise ValueError("gpu_count must be >= 1")
        # normalize lists passed by callers
        object.__setattr__(self, "phases", tuple(self.phases))


@dataclass(frozen=True)
class SamplingStudyResult:
    """Estimate-error spread at one collection interval, in pp."""

    interval_s: float
    sigma_pp: float
    ci95_pp: float


# --- core generation -----------------------------------------------------


def _sample_times(config: SimConfig) -> np.ndarray:
    """Collection-window start times on the base grid."""
    n = int(math.floor(config.total_duration_s / config.base_interval_s + 1e-9))
    return np.arange(n) * config.base_interval_s


def _tpa_grid(config: SimConfig) -> np.ndarray:
    """Window-averaged activity per base sample (exact for the schedule)."""
    times = _sample_times(config)
    if len(config.phases) == 1:
        return np.full(len(times), config.phases[0].tpa)
    bounds: list[float] = []
    acc = 0.0
    for phase in config.phases:
        acc += phase.duration_s
        bounds.append(acc)
    tpas = [phase.tpa for phase in config.phases]
    cycle = bounds[-1]
    dt = config.base_interval_s
    return np.array([_window_mean_tpa(bounds, tpas, cycle, t, t + dt) for t in times])


def _window_mean_tpa(
    bounds: list[float], tpas: list[float], cycle: float, t0: float, t1: float
) -> float:
    """Average of the cycled phase schedule over [t0, t1).

    A window that lies entirely inside one phase returns that phase's
    value bit-exactly; windows straddling boundaries get the weighted
    mix.
    """
    pos = math.fmod(t0, cycle)
    if pos < 0:
        pos += cycle
    idx = bisect.bisect_right(bounds, pos)
    if idx == len(bounds):  # fp edge: pos landed on the cycle end
        idx, pos = 0, 0.0
    remaining = t1 - t0
    if bounds[idx] - pos >= remaining - 1e-12:
        return tpas[idx]
    acc = 0.0
    while remaining > 1e-12:
        seg = min(bounds[idx] - pos, remaining)
        if seg > 0:
            acc += tpas[idx] * seg
            remaining -= seg
            pos += seg
        if pos >= bounds[idx] - 1e-15:
            idx += 1
            if idx == len(bounds):
                idx, pos = 0, 0.0
    return acc / (t1 - t0)


def _truncated_normal(rng: np.random.Generator, model: ClockModel, size: int) -> np.ndarray:
    """Draws from N(mean, std) conditioned on [min, max], by rejection."""
    if model.std_mhz == 0 or model.min_mhz == model.max_mhz:
        return np.full(size, float(model.mean_mhz))
    out = rng.normal(model.mean_mhz, model.std_mhz, size)
    bad = (out < model.min_mhz) | (out > model.max_mhz)
    while bad.any():
        out[bad] = rng.normal(model.mean_mhz, model.std_mhz, int(bad.sum()))
        bad = (out < model.min_mhz) | (out > model.max_mhz)
    return out


def _clock_at_times(
    rng: np.random.Generator, model: ClockModel, times: np.ndarray, base_interval: float
) -> np.ndarray:
    """Instantaneous clock value at each sample instant.

    The clock holds each draw for one update period; samples spaced
    wider than the update period each see a fresh draw, while a slow
    clock (period > sample spacing) is shared across adjacent samples.
    """
    if 1.0 / model.update_hz <= base_interval + 1e-12:
        return _truncated_normal(rng, model, len(times))
    idx = np.floor(times * model.update_hz + 1e-9).astype(np.int64)
    unique, inverse = np.unique(idx, return_inverse=True)
    return _truncated_normal(rng, model, len(unique))[inverse]


def _gpu_rngs(config: SimConfig) -> list[np.random.Generator]:
    children = np.random.SeedSequence(config.seed).spawn(config.gpu_count)
    return [np.random.default_rng(child) for child in children]


def simulate_counters(config: SimConfig) -> list[CounterSample]:
    """Generate the counter stream for every GPU in the config.

    Samples are timestamped at the start of their collection window and
    ordered by (timestamp, gpu index).  Deterministic given the seed.
    """
    times = _sample_times(config)
    tpa = _tpa_grid(config)
    clocks = [
        _clock_at_times(rng, config.clock, times, config.base_interval_s)
        for rng in _gpu_rngs(config)
    ]
    samples: list[CounterSample] = []
    for j, t in enumerate(times):
        for g in range(config.gpu_count):
            samples.append(
                CounterSample(
                    timestamp=float(t),
                    gpu_id=f"gpu{g}",
                    tensor_active=float(tpa[j]),
                    sm_clock_mhz=float(clocks[g][j]),
                )
            )
    return samples


# --- subsampling-error study ----------------------------------------------


def sampling_error_study(
    config: SimConfig,
    intervals: list[float],
    f_max_mhz: float,
    n_seeds: int = 100,
) -> list[SamplingStudyResult]:
    """Measure what coarser collection intervals cost in estimate error.

    For each of ``n_seeds`` independent runs, the mean utilization on
    the base grid is the per-run baseline; at each coarser interval the
    mean is re-estimated from every phase-offset subsample and the
    deviation from the baseline recorded in percentage points.  The
    reported sigma is the population spread of those deviations pooled
    across offsets and seeds; ci95 is the symmetric normal-approximation
    half-width (1.96 sigma).

    Every interval must be a whole multiple of the base interval
    (NonMultipleInterval otherwise).  An interval equal to the base
    grid reproduces the baseline and reports exactly zero.
    """
    if f_max_mhz <= 0:
        raise ValueError("f_max_mhz must be > 0")
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    times = _sample_times(config)
    n = len(times)
    strides: list[int] = []
    for interval in intervals:
        ratio = interval / config.base_interval_s
        if interval < config.base_interval_s or abs(ratio - round(ratio)) > 1e-9:
            raise NonMultipleInterval(
                f"interval {interval} s is not a whole multiple of the "
                f"base interval {config.base_interval_s} s"
            )
        stride = int(round(ratio))
        if stride > n:
            raise EmptyWindow(
                f"interval {interval} s leaves no samples in a "
                f"{config.total_duration_s} s run"
            )
        strides.append(stride)

    tpa = _tpa_grid(config)  # schedule is deterministic; share across seeds
    errors: dict[float, list[float]] = {interval: [] for interval in intervals}
    for child in np.random.SeedSequence(config.seed).spawn(n_seeds):
        rng = np.random.default_rng(child)
        rows = []
        for _ in range(config.gpu_count):
            clocks = _clock_at_times(rng, config.clock, times, config.base_interval_s)
            rows.append(tpa * clocks / f_max_mhz)
        ofu = np.stack(rows)
        # Deviations from a per-run shift keep the arithmetic exact when
        # every sample is identical (zero-noise collapse).
        shift = float(ofu[0, 0])
        centered = ofu - shift
        baseline_dev = float(centered.mean())
        for interval, stride in zip(intervals, strides):
            for offset in range(stride):
                sub_dev = float(centered[:, offset::stride].mean())
                errors[interval].append((sub_dev - baseline_dev) * 100.0)

    results = []
    for interval in intervals:
        sigma = float(np.std(np.asarray(errors[interval])))
        results.append(
            SamplingStudyResult(
                interval_s=float(interval), sigma_pp=sigma, ci95_pp=1.96 * sigma
            )
        )
    return results
