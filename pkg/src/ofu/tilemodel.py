"""GEMM tile quantization: predicting executed FLOPs from tiling geometry.

GEMM kernels partition the output matrix into fixed-size tiles and
zero-pad the last tile in each dimension, so the hardware executes
2 * M_eff * N_eff * K_eff FLOPs instead of the theoretical 2*M*N*K.
Kernels that group thread blocks into (C_M x C_N) clusters round the
tile count itself up to whole clusters, giving M and N a second ceiling:

    m_eff = ceil(ceil(m / T_M) / C_M) * C_M * T_M      (n analogous)
    k_eff = ceil(k / T_K) * T_K                        (no cluster level)

nvJet kernel names encode the full geometry, which makes the executed
FLOP count statically predictable; XMMA and CUTLASS names do not, so for
those families the model accepts an externally measured count instead.

Everything here is a pure function over immutable values.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .archdb import Precision
from .errors import NonPositiveFlops, UnderTheoretic

__all__ = [
    "GemmShape",
    "TileConfig",
    "KernelFamily",
    "KernelDescriptor",
    "FlopsEstimate",
    "effective_dims",
    "overhead",
    "predict_flops",
    "adjust_ofu",
    "parse_kernel_name",
    "render_geometry",
    "sweep_overhead",
    "DEFAULT_TILE_CONFIG",
    "DEFAULT_TILES_BY_PRECISION",
]


@dataclass(frozen=True)
class GemmShape:
    """Problem size of C = A x B with A being MxK and B being KxN."""

    m: int
    k: int
    n: int

    def __post_init__(self) -> None:
        if min(self.m, self.k, self.n) < 1:
            raise ValueError(f"matrix dimensions must be >= 1, got {self}")

    @property
    def theoretical_flops(self) -> int:
        return 2 * self.m * self.n * self.k


@dataclass(frozen=True)
class TileConfig:
    """Thread-block tile dimensions plus cluster shape (1x1 = unclustered)."""

    t_m: int
    t_n: int
    t_k: int
    c_m: int = 1
    c_n: int = 1

    def __post_init__(self) -> None:
        if min(self.t_m, self.t_n, self.t_k, self.c_m, self.c_n) < 1:
            raise ValueError(f"tile/cluster dimensions must be >= 1, got {self}")


class KernelFamily(Enum):
    NVJET = "nvJet"
    XMMA = "XMMA"
    CUTLASS2 = "CUTLASS2"
    CUTLASS3 = "CUTLASS3"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class KernelDescriptor:
    """Decoded GEMM kernel name.

    ``tiles`` is populated only for nvJet names of the documented shape;
    ``stages`` is the pipeline-stage count encoded next to the K tile
    (recorded for round-tripping, unused in the FLOP math).
    """

    family: KernelFamily
    raw_name: str
    arch_tag: str | None = None
    precision_tag: str | None = None
    tiles: TileConfig | None = None
    stages: int | None = None


@dataclass(frozen=True)
class FlopsEstimate:
    shape: GemmShape
    config: TileConfig
    effective_m: int
    effective_n: int
    effective_k: int
    model_flops: int
    overhead_pct: float


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def effective_dims(shape: GemmShape, config: TileConfig) -> tuple[int, int, int]:
    """Padded dimensions after tile-level and cluster-level rounding."""
    m_eff = _ceil_div(_ceil_div(shape.m, config.t_m), config.c_m) * config.c_m * config.t_m
    n_eff = _ceil_div(_ceil_div(shape.n, config.t_n), config.c_n) * config.c_n * config.t_n
    k_eff = _ceil_div(shape.k, config.t_k) * config.t_k
    return m_eff, n_eff, k_eff


def overhead(shape: GemmShape, executed_flops: int) -> float:
    """Percentage of executed FLOPs beyond the theoretical 2*M*N*K."""
    theoretical = shape.theoretical_flops
    if executed_flops < theoretical:
        raise UnderTheoretic(
            f"executed FLOPs {executed_flops} below theoretical {theoretical}; "
            "measurement or model bug"
        )
    return (executed_flops - theoretical) / theoretical * 100.0


def predict_flops(shape: GemmShape, config: TileConfig) -> FlopsEstimate:
    """Closed-form executed-FLOP prediction for a known tiling geometry."""
    m_eff, n_eff, k_eff = effective_dims(shape, config)
    model_flops = 2 * m_eff * n_eff * k_eff
    return FlopsEstimate(
        shape=shape,
        config=config,
        effective_m=m_eff,
        effective_n=n_eff,
        effective_k=k_eff,
        model_flops=model_flops,
        overhead_pct=overhead(shape, model_flops),
    )


def adjust_ofu(ofu: float, shape: GemmShape, executed_flops: int) -> float:
    """Remove tile-padding overcount from a utilization reading.

    The hardware counter credits padded FLOPs as useful work, so raw
    utilization overestimates by the padding ratio; multiplying by
    theoretical/executed restores the application's view.
    """
    if executed_flops <= 0:
        raise NonPositiveFlops(f"executed FLOPs must be > 0, got {executed_flops}")
    # ratio first: the padding-free case divides equal counts and stays
    # an exact 1.0, making the adjustment a true identity
    return ofu * (shape.theoretical_flops / executed_flops)


# --- kernel-name decoding ----------------------------------------------
#
# Documented nvJet shape:  nvjet_<arch>_<prec>_<TM>x<TN>_<TK>x<STAGES>_<CM>x<CN>
# e.g. nvjet_sm90_hsh_256x160_64x4_2x1.  The field mapping (second pair =
# K tile x pipeline stages, third pair = cluster shape) is an assumption
# isolated here so the math never depends on it.  Trailing variant tokens
# after the cluster pair are tolerated.

_NVJET_RE = re.compile(
    r"^nvjet_(?P<arch>sm\d+[a-z]?)_(?P<prec>[a-z0-9]+)"
    r"_(?P<tm>\d+)x(?P<tn>\d+)_(?P<tk>\d+)x(?P<stages>\d+)_(?P<cm>\d+)x(?P<cn>\d+)"
    r"(?:_\S*)?$"
)


def parse_kernel_name(name: str) -> KernelDescriptor:
    """Classify a GEMM kernel name; total on arbitrary strings.

    Undecodable names come back as family ``unknown`` - never an error.
    """
    match = _NVJET_RE.match(name.strip())
    if match:
        try:
            tiles = TileConfig(
                t_m=int(match["tm"]),
                t_n=int(match["tn"]),
                t_k=int(match["tk"]),
                c_m=int(match["cm"]),
                c_n=int(match["cn"]),
            )
        except ValueError:
            return KernelDescriptor(family=KernelFamily.UNKNOWN, raw_name=name)
        return KernelDescriptor(
            family=KernelFamily.NVJET,
            raw_name=name,
            arch_tag=match["arch"],
            precision_tag=match["prec"],
            tiles=tiles,
            stages=int(match["stages"]),
        )
    lowered = name.lower()
    if "xmma" in lowered:
        return KernelDescriptor(family=KernelFamily.XMMA, raw_name=name)
    if "cutlass3x" in lowered:
        return KernelDescriptor(family=KernelFamily.CUTLASS3, raw_name=name)
    if "cutlass" in lowered:
        return KernelDescriptor(family=KernelFamily.CUTLASS2, raw_name=name)
    return KernelDescriptor(family=KernelFamily.UNKNOWN, raw_name=name)


def render_geometry(descriptor: KernelDescriptor) -> str:
    """Re-render the tile/cluster substring of a decoded nvJet name.

    Inverse of the parser on its geometry fields: for any decodable name
    the result is a byte-exact substring of the original.
    """
    if descriptor.tiles is None or descriptor.stages is None:
        raise ValueError("descriptor carries no decodable tiling geometry")
    t = descriptor.tiles
    return f"{t.t_m}x{t.t_n}_{t.t_k}x{descriptor.stages}_{t.c_m}x{t.c_n}"


# --- defaults and sweeps -----------------------------------------------

# Conservative mid-size tile used when the kernel geometry is unknown;
# outputs derived from it are modeled, not measured.
DEFAULT_TILE_CONFIG = TileConfig(t_m=128, t_n=128, t_k=64)

# Typical per-precision tiles for the narrow block-scaled formats; the
# wider formats share the generic default.
DEFAULT_TILES_BY_PRECISION: dict[Precision, TileConfig] = {
    Precision.FP16: DEFAULT_TILE_CONFIG,
    Precision.BF16: DEFAULT_TILE_CONFIG,
    Precision.TF32: DEFAULT_TILE_CONFIG,
    Precision.FP8: TileConfig(t_m=128, t_n=256, t_k=128),
    Precision.NVFP4: TileConfig(t_m=128, t_n=256, t_k=256),
}


def sweep_overhead(
    sizes: list[int],
    precision: Precision,
    config: TileConfig | None = None,
) -> list[tuple[int, str, float]]:
    """Overhead of square n x n x n problems under one tiling config.

    Returns (n, precision, overhead_pct) rows, ready for plotting the
    overhead-vs-size curve.
    """
    tiles = config or DEFAULT_TILES_BY_PRECISION.get(precision, DEFAULT_TILE_CONFIG)
    rows = []
    for n in sizes:
        estimate = predict_flops(GemmShape(m=n, k=n, n=n), tiles)
        rows.append((n, precision.value, estimate.overhead_pct))
    return rows
