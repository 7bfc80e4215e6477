import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aegissat.bitstream import (
    CNN_USAGE,
    SHIFT_USAGE,
    BehaviorId,
    FeatureSummary,
    ResourceUsage,
    ScanVerdict,
    SimBitstream,
    trojan_scan,
)

u32 = st.integers(0, 2**32 - 1)


@given(st.sampled_from(list(BehaviorId)), st.binary(max_size=40), st.builds(ResourceUsage, u32, u32, u32, u32, u32, u32, u32),
       st.builds(FeatureSummary, u32, u32, u32, u32), st.binary(max_size=300))
@settings(max_examples=100, deadline=None)
def test_roundtrip(bid, params, usage, feats, body):
    bs = SimBitstream(bid, params, usage, feats, body)
    assert SimBitstream.decode(bs.encode()) == bs


@pytest.mark.parametrize("blob", [b"", b"SBIT", b"XBIT" + b"\x00" * 80, b"SBIT\x07" + b"\x00" * 80])
def test_decode_rejects(blob):
    with pytest.raises(ValueError):
        SimBitstream.decode(blob)


def test_decode_rejects_length_mismatch():
    blob = SimBitstream(BehaviorId.OPAQUE, b"", CNN_USAGE, FeatureSummary(), b"abc").encode()
    with pytest.raises(ValueError):
        SimBitstream.decode(blob + b"!")


def test_usage_tables():
    assert CNN_USAGE.to_dict() == dict(clb_luts=30, luts_as_logic=30, clb_registers=32, registers_as_ff=32,
                                       f7_muxes=1, carry8=0, bram_tiles=0)
    assert SHIFT_USAGE.to_dict() == dict(clb_luts=2, luts_as_logic=2, clb_registers=35, registers_as_ff=35,
                                         f7_muxes=0, carry8=5, bram_tiles=1)
    assert CNN_USAGE.fits(CNN_USAGE) and not CNN_USAGE.fits(SHIFT_USAGE)
    assert ResourceUsage.from_dict(CNN_USAGE.to_dict()) == CNN_USAGE
    with pytest.raises(ValueError):
        ResourceUsage.from_dict({"dsp": 1})
    with pytest.raises(ValueError):
        ResourceUsage(clb_luts=-1)


def test_trojan_scan():
    clean = SimBitstream(BehaviorId.CNN_V1, b"", CNN_USAGE, FeatureSummary())
    assert trojan_scan(clean).verdict is ScanVerdict.CLEAN
    bad = SimBitstream(BehaviorId.CNN_V1, b"", CNN_USAGE, FeatureSummary(ring_oscillator_like=2, power_drain_primitives=1))
    rep = trojan_scan(bad)
    assert rep.verdict is ScanVerdict.SUSPECT
    assert rep.flagged == (("ring_oscillator_like", 2), ("power_drain_primitives", 1))
