import pytest

from ofu.archdb import (
    BUILTIN_ARCHITECTURES,
    GpuArchitecture,
    PeakThroughput,
    Precision,
    builtin_database,
    datasheet_peaks,
    dump_arch_specs,
    get_architecture,
    load_arch_specs,
    peak_tflops,
    scaled_peak,
)
from ofu.errors import (
    InvariantViolation,
    MissingPrecision,
    NonPositiveRatio,
    ParseError,
    UnknownArchitecture,
)


def test_h100_fp16_peak_from_first_principles():
    h100 = get_architecture("H100-SXM")
    peak = peak_tflops(h100, Precision.FP16)
    # 132 SMs x 4096 FLOPs/cycle x 1830 MHz
    assert peak.tflops == pytest.approx(989.42976, abs=1e-9)
    assert peak.architecture == "H100-SXM"
    assert peak.precision is Precision.FP16


def test_gb200_fp16_peak_matches_published_rate():
    gb200 = get_architecture("GB200")
    peak = peak_tflops(gb200, Precision.FP16)
    assert peak.tflops == pytest.approx(2499.9, abs=0.1)


def test_peak_formula_is_the_plain_three_factor_product():
    arch = GpuArchitecture(
        name="toy",
        sm_count=148,
        sm_boost_clock_mhz=2062.0,
        tensor_clock_mhz={Precision.FP16: 2062.0},
        flops_per_cycle_per_sm={Precision.FP16: 8192},
    )
    assert peak_tflops(arch, Precision.FP16).tflops == 148 * 8192 * 2062e6 / 1e12


def test_missing_precision_raises():
    h100 = get_architecture("H100-SXM")
    with pytest.raises(MissingPrecision):
        peak_tflops(h100, Precision.NVFP4)
    with pytest.raises(MissingPrecision):
        peak_tflops(h100, Precision.FP64)


def test_scaled_peak():
    base = PeakThroughput("H100-SXM", Precision.FP16, 989.0)
    assert scaled_peak(base, 2, Precision.FP8).tflops == 1978.0
    assert scaled_peak(base, 0.5, Precision.TF32).tflops == 494.5
    identity = scaled_peak(base, 1)
    assert identity.tflops == base.tflops
    assert identity.precision is base.precision


def test_scaled_peak_rejects_nonpositive_ratio():
    base = PeakThroughput("H100-SXM", Precision.FP16, 989.0)
    with pytest.raises(NonPositiveRatio):
        scaled_peak(base, 0)
    with pytest.raises(NonPositiveRatio):
        scaled_peak(base, -1.5)


def test_datasheet_peaks_h100():
    peaks = datasheet_peaks(get_architecture("H100-SXM"))
    assert peaks[Precision.FP16].tflops == pytest.approx(989.4, abs=0.05)
    assert peaks[Precision.FP8].tflops == pytest.approx(1978.0, abs=0.1)
    assert peaks[Precision.TF32].tflops == pytest.approx(494.5, abs=0.05)


def test_datasheet_falls_back_to_first_principles_without_base_rate():
    arch = GpuArchitecture(
        name="bare",
        sm_count=100,
        sm_boost_clock_mhz=1000.0,
        tensor_clock_mhz={Precision.FP16: 1000.0, Precision.FP8: 1000.0},
        flops_per_cycle_per_sm={Precision.FP16: 2048, Precision.FP8: 4096},
    )
    peaks = datasheet_peaks(arch)
    assert peaks[Precision.FP16].tflops == peak_tflops(arch, Precision.FP16).tflops
    assert peaks[Precision.FP8].tflops == peak_tflops(arch, Precision.FP8).tflops


def test_builtin_fp8_is_exactly_twice_fp16():
    for arch in BUILTIN_ARCHITECTURES.values():
        fp16 = peak_tflops(arch, Precision.FP16).tflops
        fp8 = peak_tflops(arch, Precision.FP8).tflops
        assert fp8 == 2 * fp16


def test_peak_is_linear_in_sm_count():
    for arch in BUILTIN_ARCHITECTURES.values():
        doubled = GpuArchitecture(
            name=arch.name,
            sm_count=2 * arch.sm_count,
            sm_boost_clock_mhz=arch.sm_boost_clock_mhz,
            tensor_clock_mhz=arch.tensor_clock_mhz,
            flops_per_cycle_per_sm=arch.flops_per_cycle_per_sm,
        )
        for prec in arch.precisions:
            assert (
                peak_tflops(doubled, prec).tflops == 2 * peak_tflops(arch, prec).tflops
            )


def test_element_bits():
    assert Precision.FP64.element_bits == 64
    assert Precision.FP32.element_bits == 32
    assert Precision.TF32.element_bits == 32  # compute format in FP32 storage
    assert Precision.BF16.element_bits == 16
    assert Precision.FP16.element_bits == 16
    assert Precision.FP8.element_bits == 8
    assert Precision.NVFP4.element_bits == 4
    assert len({p.value for p in Precision}) == len(list(Precision))


# --- spec-document loading -------------------------------------------------

SPEC_TEXT = """
[H100-SXM]
sm_count = 132
sm_boost_clock_mhz = 1980
base_precision = FP16
published_base_tflops = 989
FP16 = 1830 4096
FP8 = 1830 8192

[Custom-GPU]
sm_count = 64
sm_boost_clock_mhz = 1500
FP16 = 1400 2048
"""


def test_load_arch_specs():
    archs = load_arch_specs(SPEC_TEXT)
    assert [a.name for a in archs] == ["H100-SXM", "Custom-GPU"]
    h100 = archs[0]
    assert h100.sm_count == 132
    assert h100.tensor_clock_mhz[Precision.FP16] == 1830.0
    assert h100.flops_per_cycle_per_sm[Precision.FP8] == 8192
    assert h100.published_base_tflops == 989.0
    assert archs[1].base_precision is None


def test_load_empty_document():
    assert load_arch_specs("") == []
    assert load_arch_specs("# just a comment\n") == []


def test_builtin_entries_present_and_valid():
    db = builtin_database()
    h100 = db["H100-SXM"]
    assert h100.tensor_clock_mhz[Precision.FP16] == 1830.0
    assert h100.sm_boost_clock_mhz == 1980.0
    gb200 = db["GB200"]
    assert gb200.sm_count == 148
    for arch in db.values():
        arch.validate()


def test_tensor_clock_above_boost_is_invariant_violation():
    text = """
[Bad]
sm_count = 10
sm_boost_clock_mhz = 1000
FP16 = 1200 256
"""
    with pytest.raises(InvariantViolation):
        load_arch_specs(text)


def test_family_scaling_invariant_enforced():
    text = """
[Bad]
sm_count = 10
sm_boost_clock_mhz = 2000
FP16 = 1800 256
FP8 = 1800 1000
"""
    with pytest.raises(InvariantViolation):
        load_arch_specs(text)


@pytest.mark.parametrize(
    "text",
    [
        "[X]\nsm_count = 10\n",  # missing boost clock
        "[X]\nsm_count = ten\nsm_boost_clock_mhz = 1000\n",
        "[X]\nsm_count = 10\nsm_boost_clock_mhz = 1000\nFP16 = 1000\n",  # lone value
        "[X]\nsm_count = 10\nsm_boost_clock_mhz = 1000\nFP99 = 1000 64\n",
        "no section header at all\n",
    ],
)
def test_malformed_documents_raise_parse_error(text):
    with pytest.raises(ParseError):
        load_arch_specs(text)


def test_roundtrip_serialization():
    for original in (
        list(BUILTIN_ARCHITECTURES.values()),
        load_arch_specs(SPEC_TEXT),
    ):
        assert load_arch_specs(dump_arch_specs(original)) == original


def test_unknown_architecture():
    with pytest.raises(UnknownArchitecture):
        get_architecture("Z9000")
    assert get_architecture("h100-sxm").name == "H100-SXM"
