"""Simulated partial-bitstream payloads and the rule-based trojan scan."""

from __future__ import annotations

import enum
import struct
from dataclasses import astuple, dataclass, fields

SBIT_MAGIC = b"SBIT"
_HEAD = struct.Struct("<4sBH")
_RES = struct.Struct("<7I")
_FEAT = struct.Struct("<4I")
_LEN = struct.Struct("<I")


class BehaviorId(enum.IntEnum):
    CNN_V1 = 0
    SHIFT_V1 = 1
    OPAQUE = 2


@dataclass(frozen=True)
class ResourceUsage:
    clb_luts: int = 0
    luts_as_logic: int = 0
    clb_registers: int = 0
    registers_as_ff: int = 0
    f7_muxes: int = 0
    carry8: int = 0
    bram_tiles: int = 0

    def __post_init__(self):
        if any(v < 0 for v in astuple(self)):
            raise ValueError("resource counts are non-negative")

    def fits(self, budget: "ResourceUsage") -> bool:
        """True when every component is within ``budget``."""
        return all(a <= b for a, b in zip(astuple(self), astuple(budget)))

    def scaled(self, k: int) -> "ResourceUsage":
        return ResourceUsage(*(v * k for v in astuple(self)))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ResourceUsage":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown resource fields: {sorted(unknown)}")
        return cls(**{k: int(v) for k, v in d.items()})


@dataclass(frozen=True)
class FeatureSummary:
    combinational_loops: int = 0
    ring_oscillator_like: int = 0
    sensor_primitives: int = 0
    power_drain_primitives: int = 0

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# Usage reported for the two demonstration accelerators.
CNN_USAGE = ResourceUsage(clb_luts=30, luts_as_logic=30, clb_registers=32, registers_as_ff=32, f7_muxes=1)
SHIFT_USAGE = ResourceUsage(
    clb_luts=2, luts_as_logic=2, clb_registers=35, registers_as_ff=35, carry8=5, bram_tiles=1
)


@dataclass(frozen=True)
class SimBitstream:
    behavior_id: BehaviorId
    behavior_params: bytes
    resource_usage: ResourceUsage
    feature_summary: FeatureSummary
    body: bytes = b""

    def encode(self) -> bytes:
        return b"".join(
            (
                _HEAD.pack(SBIT_MAGIC, int(self.behavior_id), len(self.behavior_params)),
                self.behavior_params,
                _RES.pack(*astuple(self.resource_usage)),
                _FEAT.pack(*astuple(self.feature_summary)),
                _LEN.pack(len(self.body)),
                self.body,
            )
        )

    @classmethod
    def decode(cls, data: bytes) -> "SimBitstream":
        data = bytes(data)
        try:
            magic, bid, plen = _HEAD.unpack_from(data, 0)
            if magic != SBIT_MAGIC:
                raise ValueError("bad bitstream magic")
            off = _HEAD.size
            params = data[off : off + plen]
            if len(params) != plen:
                raise ValueError("truncated behaviour parameters")
            off += plen
            res = ResourceUsage(*_RES.unpack_from(data, off))
            off += _RES.size
            feat = FeatureSummary(*_FEAT.unpack_from(data, off))
            off += _FEAT.size
            (blen,) = _LEN.unpack_from(data, off)
            off += _LEN.size
            body = data[off:]
            if len(body) != blen:
                raise ValueError("body length mismatch")
            return cls(BehaviorId(bid), params, res, feat, body)
        except struct.error as exc:
            raise ValueError(f"truncated bitstream: {exc}") from None


class ScanVerdict(enum.Enum):
    CLEAN = "Clean"
    SUSPECT = "Suspect"


@dataclass(frozen=True)
class TrojanScanReport:
    verdict: ScanVerdict
    flagged: tuple[tuple[str, int], ...]


def trojan_scan(bitstream: SimBitstream) -> TrojanScanReport:
    """Flag every forbidden structural feature with a nonzero count."""
    flagged = tuple((name, n) for name, n in bitstream.feature_summary.to_dict().items() if n > 0)
    return TrojanScanReport(ScanVerdict.SUSPECT if flagged else ScanVerdict.CLEAN, flagged)
