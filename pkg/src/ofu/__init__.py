"""ofu - GPU fleet efficiency analytics from hardware counters.

Computes Overall FLOP Utilization (tensor-pipe activity times normalized
SM clock) from counter telemetry, models GEMM tile-quantization
overhead, audits application-reported MFU against the hardware view, and
ships a deterministic counter simulator for desk-scale validation.
"""

from .archdb import (
    GpuArchitecture,
    PeakThroughput,
    Precision,
    builtin_database,
    datasheet_peaks,
    get_architecture,
    load_arch_specs,
    peak_tflops,
    scaled_peak,
)
from .analyze import (
    DivergenceReport,
    JobRecord,
    ScaleGroup,
    apply_flops_correction,
    divergence_report,
    exclude_and_recompute,
    group_by_scale,
    ofu_derived_speedup,
)
from .ingest import (
    JobWindow,
    TraceSource,
    align_to_window,
    parse_csv,
    parse_prometheus_text,
    write_trace_csv,
)
from .metric import (
    CounterSample,
    JobAggregate,
    OfuPoint,
    PrecisionFlops,
    aggregate_job,
    app_mfu,
    effective_peak,
    ofu_point,
)
from .simulate import (
    ClockModel,
    SamplingStudyResult,
    SimConfig,
    WorkloadPhase,
    sampling_error_study,
    simulate_counters,
)
from .tilemodel import (
    FlopsEstimate,
    GemmShape,
    KernelDescriptor,
    KernelFamily,
    TileConfig,
    adjust_ofu,
    effective_dims,
    overhead,
    parse_kernel_name,
    predict_flops,
)

__version__ = "0.1.0"
