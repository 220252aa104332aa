"""GPU architecture database and theoretical peak tensor throughput.

Peak tensor-pipeline throughput for one precision is fixed by three
architectural parameters:

    peak TFLOP/s = sm_count * flops_per_cycle_per_sm * tensor_clock_hz / 1e12

Tensor pipelines may boost to a lower maximum clock than the SM itself
(on H100-SXM the reduced-precision tensor formats top out at 1,830 MHz
against a 1,980 MHz SM boost clock), so the database carries a clock per
precision.

Vendor datasheets derive the non-base precisions differently: they quote
a round published number for the base format (989 TFLOP/s FP16 on
H100-SXM) and scale the remaining formats proportionally from it
(FP8 = 2 x 989 = 1,978; TF32 = 989 / 2 = 494.5).  ``datasheet_peaks``
reproduces that convention; ``peak_tflops`` is always the pure
first-principles product.

The database is immutable after load and safe for concurrent reads.
"""

from __future__ import annotations

import enum
import io
from collections.abc import Iterable, Mapping
from configparser import ConfigParser, Error as ConfigParserError
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    InvariantViolation,
    MissingPrecision,
    NonPositiveRatio,
    ParseError,
    UnknownArchitecture,
)

__all__ = [
    "Precision",
    "GpuArchitecture",
    "PeakThroughput",
    "peak_tflops",
    "scaled_peak",
    "datasheet_peaks",
    "load_arch_specs",
    "load_arch_file",
    "dump_arch_specs",
    "builtin_database",
    "get_architecture",
    "BUILTIN_ARCHITECTURES",
]


class Precision(str, enum.Enum):
    """Numeric formats executed on the tensor pipeline."""

    FP64 = "FP64"
    FP32 = "FP32"
    TF32 = "TF32"
    BF16 = "BF16"
    FP16 = "FP16"
    FP8 = "FP8"
    NVFP4 = "NVFP4"

    @property
    def element_bits(self) -> int:
        """Storage width of one element (TF32 occupies FP32 storage)."""
        return _ELEMENT_BITS[self]

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


_ELEMENT_BITS: dict[Precision, int] = {
    Precision.FP64: 64,
    Precision.FP32: 32,
    Precision.TF32: 32,
    Precision.BF16: 16,
    Precision.FP16: 16,
    Precision.FP8: 8,
    Precision.NVFP4: 4,
}


@dataclass(frozen=True)
class GpuArchitecture:
    """Architectural parameters of one GPU model.

    ``tensor_clock_mhz`` and ``flops_per_cycle_per_sm`` are keyed by
    precision and must cover the same set of precisions.  The optional
    ``published_base_tflops``/``base_precision`` pair records the round
    datasheet number used for proportional scaling of the other formats.
    """

    name: str
    sm_count: int
    sm_boost_clock_mhz: float
    tensor_clock_mhz: Mapping[Precision, float]
    flops_per_cycle_per_sm: Mapping[Precision, int]
    base_precision: Precision | None = None
    published_base_tflops: float | None = None

    def validate(self) -> None:
        """Raise InvariantViolation naming the first failed validity rule."""
        where = f"architecture {self.name!r}"
        if self.sm_count <= 0:
            raise InvariantViolation(f"{where}: sm_count must be > 0")
        if self.sm_boost_clock_mhz <= 0:
            raise InvariantViolation(f"{where}: sm_boost_clock_mhz must be > 0")
        if set(self.tensor_clock_mhz) != set(self.flops_per_cycle_per_sm):
            raise InvariantViolation(
                f"{where}: tensor clock and FLOPs/cycle maps cover different precisions"
            )
        for prec, clock in self.tensor_clock_mhz.items():
            if clock <= 0:
                raise InvariantViolation(f"{where}: tensor clock for {prec} must be > 0")
            if clock > self.sm_boost_clock_mhz:
                raise InvariantViolation(
                    f"{where}: tensor clock for {prec} ({clock} MHz) exceeds "
                    f"SM boost clock ({self.sm_boost_clock_mhz} MHz)"
                )
        for prec, fpc in self.flops_per_cycle_per_sm.items():
            if fpc <= 0:
                raise InvariantViolation(f"{where}: FLOPs/cycle for {prec} must be > 0")
        fpc = self.flops_per_cycle_per_sm
        if Precision.FP8 in fpc and Precision.FP16 in fpc:
            if fpc[Precision.FP8] != 2 * fpc[Precision.FP16]:
                raise InvariantViolation(f"{where}: FP8 FLOPs/cycle must be 2x FP16")
        if Precision.TF32 in fpc and Precision.FP16 in fpc:
            if 2 * fpc[Precision.TF32] != fpc[Precision.FP16]:
                raise InvariantViolation(f"{where}: TF32 FLOPs/cycle must be FP16 / 2")
        if self.base_precision is not None and self.base_precision not in fpc:
            raise InvariantViolation(
                f"{where}: base precision {self.base_precision} has no database entry"
            )
        if self.published_base_tflops is not None and self.published_base_tflops <= 0:
            raise InvariantViolation(f"{where}: published_base_tflops must be > 0")

    @property
    def precisions(self) -> tuple[Precision, ...]:
        return tuple(self.flops_per_cycle_per_sm)


@dataclass(frozen=True)
class PeakThroughput:
    """Theoretical peak TFLOP/s of one (architecture, precision) pair."""

    architecture: str
    precision: Precision
    tflops: float


def peak_tflops(arch: GpuArchitecture, precision: Precision) -> PeakThroughput:
    """First-principles peak: SMs x FLOPs/cycle/SM x max tensor clock.

    Deterministic; carried at full float precision (display rounding is
    the CLI's job).
    """
    try:
        fpc = arch.flops_per_cycle_per_sm[precision]
        clock_mhz = arch.tensor_clock_mhz[precision]
    except KeyError:
        raise MissingPrecision(
            f"architecture {arch.name!r} has no entry for {precision}"
        ) from None
    tflops = arch.sm_count * fpc * clock_mhz * 1e6 / 1e12
    return PeakThroughput(architecture=arch.name, precision=precision, tflops=tflops)


def scaled_peak(
    base: PeakThroughput, ratio: float, precision: Precision | None = None
) -> PeakThroughput:
    """Scale a peak proportionally, e.g. FP8 = 2x the FP16 base rate."""
    if ratio <= 0:
        raise NonPositiveRatio(f"scaling ratio must be > 0, got {ratio}")
    return PeakThroughput(
        architecture=base.architecture,
        precision=precision if precision is not None else base.precision,
        tflops=base.tflops * ratio,
    )


def datasheet_peaks(arch: GpuArchitecture) -> dict[Precision, PeakThroughput]:
    """Per-precision peaks the way a vendor datasheet derives them.

    The base precision is computed from first principles; every other
    precision is the published base rate scaled by the first-principles
    throughput ratio.  Without a published base rate, all precisions
    fall back to the first-principles product.
    """
    base_prec = arch.base_precision
    if base_prec is None or arch.published_base_tflops is None:
        return {p: peak_tflops(arch, p) for p in arch.precisions}
    base_eq = peak_tflops(arch, base_prec)
    published = PeakThroughput(arch.name, base_prec, arch.published_base_tflops)
    out: dict[Precision, PeakThroughput] = {}
    for prec in arch.precisions:
        if prec == base_prec:
            out[prec] = base_eq
        else:
            ratio = peak_tflops(arch, prec).tflops / base_eq.tflops
            out[prec] = scaled_peak(published, ratio, precision=prec)
    return out


# --- built-in database -------------------------------------------------

# H100-SXM: reduced-precision tensor formats boost to 1,830 MHz; the SM
# boost clock is 1,980 MHz.  Published FP16 base rate: 989 TFLOP/s.
_H100_SXM = GpuArchitecture(
    name="H100-SXM",
    sm_count=132,
    sm_boost_clock_mhz=1980.0,
    tensor_clock_mhz={
        Precision.FP16: 1830.0,
        Precision.BF16: 1830.0,
        Precision.FP8: 1830.0,
        Precision.TF32: 1830.0,
    },
    flops_per_cycle_per_sm={
        Precision.FP16: 4096,
        Precision.BF16: 4096,
        Precision.FP8: 8192,
        Precision.TF32: 2048,
    },
    base_precision=Precision.FP16,
    published_base_tflops=989.0,
)

# GB200: no separate tensor clock is published.  The SM boost clock is
# 2,062 MHz, but 148 x 8192 x 2062 MHz lands at 2,500.002 TFLOP/s while
# the published FP16 rate is 2,499.9; the entry therefore carries the
# effective tensor clock back-solved from the published rate (2,061.9
# MHz).  TF32/FP8/NVFP4 FLOPs/cycle are derived from the FP16 base by
# proportional width scaling, not separately published.
_GB200 = GpuArchitecture(
    name="GB200",
    sm_count=148,
    sm_boost_clock_mhz=2062.0,
    tensor_clock_mhz={
        Precision.FP16: 2061.9,
        Precision.BF16: 2061.9,
        Precision.FP8: 2061.9,
        Precision.TF32: 2061.9,
        Precision.NVFP4: 2061.9,
    },
    flops_per_cycle_per_sm={
        Precision.FP16: 8192,
        Precision.BF16: 8192,
        Precision.FP8: 16384,
        Precision.TF32: 4096,
        Precision.NVFP4: 32768,
    },
    base_precision=Precision.FP16,
    published_base_tflops=2500.0,
)

BUILTIN_ARCHITECTURES: dict[str, GpuArchitecture] = {
    _H100_SXM.name: _H100_SXM,
    _GB200.name: _GB200,
}
for _arch in BUILTIN_ARCHITECTURES.values():
    _arch.validate()


def builtin_database() -> dict[str, GpuArchitecture]:
    """Copy of the built-in architecture map (entries are immutable)."""
    return dict(BUILTIN_ARCHITECTURES)


def get_architecture(
    name: str, db: Mapping[str, GpuArchitecture] | None = None
) -> GpuArchitecture:
    """Look up an architecture by name (exact, then case-insensitive)."""
    table = BUILTIN_ARCHITECTURES if db is None else db
    if name in table:
        return table[name]
    for key, arch in table.items():
        if key.lower() == name.lower():
            return arch
    raise UnknownArchitecture(
        f"unknown architecture {name!r}; available: {', '.join(sorted(table))}"
    )


# --- spec-file loading -------------------------------------------------
#
# INI-style document, one section per architecture:
#
#   [H100-SXM]
#   sm_count = 132
#   sm_boost_clock_mhz = 1980
#   base_precision = FP16          ; optional
#   published_base_tflops = 989    ; optional
#   FP16 = 1830 4096               ; tensor_clock_mhz  flops_per_cycle_per_sm
#   FP8 = 1830 8192

_RESERVED_KEYS = {
    "sm_count",
    "sm_boost_clock_mhz",
    "base_precision",
    "published_base_tflops",
}


def load_arch_specs(text: str) -> list[GpuArchitecture]:
    """Parse a spec document into validated architectures.

    An empty document yields an empty list.  Raises ParseError with
    section/field context on malformed input and InvariantViolation when
    a record fails validation.
    """
    parser = ConfigParser(interpolation=None)
    parser.optionxform = str  # keep precision labels uppercase
    try:
        parser.read_string(text)
    except ConfigParserError as exc:
        raise ParseError(f"malformed architecture spec: {exc}") from exc

    archs: list[GpuArchitecture] = []
    for section in parser.sections():
        options = parser[section]
        try:
            sm_count = int(options["sm_count"])
            sm_boost = float(options["sm_boost_clock_mhz"])
        except KeyError as exc:
            raise ParseError(f"[{section}]: missing required field {exc.args[0]}") from None
        except ValueError as exc:
            raise ParseError(f"[{section}]: {exc}") from None

        base_precision = None
        if "base_precision" in options:
            base_precision = _parse_precision(section, options["base_precision"])
        published = None
        if "published_base_tflops" in options:
            try:
                published = float(options["published_base_tflops"])
            except ValueError:
                raise ParseError(
                    f"[{section}] published_base_tflops: not a number"
                ) from None

        clocks: dict[Precision, float] = {}
        flops: dict[Precision, int] = {}
        for key, raw in options.items():
            if key in _RESERVED_KEYS:
                continue
            prec = _parse_precision(section, key)
            parts = raw.split()
            if len(parts) != 2:
                raise ParseError(
                    f"[{section}] {key}: expected 'tensor_clock_mhz flops_per_cycle', got {raw!r}"
                )
            try:
                clocks[prec] = float(parts[0])
                flops[prec] = int(parts[1])
            except ValueError:
                raise ParseError(f"[{section}] {key}: non-numeric value in {raw!r}") from None

        arch = GpuArchitecture(
            name=section,
            sm_count=sm_count,
            sm_boost_clock_mhz=sm_boost,
            tensor_clock_mhz=clocks,
            flops_per_cycle_per_sm=flops,
            base_precision=base_precision,
            published_base_tflops=published,
        )
        arch.validate()
        archs.append(arch)
    return archs


def _parse_precision(section: str, label: str) -> Precision:
    try:
        return Precision(label.strip().upper())
    except ValueError:
        valid = ", ".join(p.value for p in Precision)
        raise ParseError(
            f"[{section}]: unknown precision {label!r} (expected one of {valid})"
        ) from None


def load_arch_file(path: str | Path) -> list[GpuArchitecture]:
    return load_arch_specs(Path(path).read_text(encoding="utf-8"))


def dump_arch_specs(archs: Iterable[GpuArchitecture]) -> str:
    """Serialize architectures to the spec-document format (round-trips)."""
    parser = ConfigParser(interpolation=None)
    parser.optionxform = str
    for arch in archs:
        parser.add_section(arch.name)
        section = parser[arch.name]
        section["sm_count"] = str(arch.sm_count)
        section["sm_boost_clock_mhz"] = _num(arch.sm_boost_clock_mhz)
        if arch.base_precision is not None:
            section["base_precision"] = arch.base_precision.value
        if arch.published_base_tflops is not None:
            section["published_base_tflops"] = _num(arch.published_base_tflops)
        for prec in arch.precisions:
            section[prec.value] = (
                f"{_num(arch.tensor_clock_mhz[prec])} {arch.flops_per_cycle_per_sm[prec]}"
            )
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _num(x: float) -> str:
    """Render a float compactly but losslessly (integral values drop '.0')."""
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))
