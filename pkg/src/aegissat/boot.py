"""Secure boot: Boot ROM -> FSBL -> OS -> PL shell, with slot fallback,
golden-image recovery, watchdog revert and two-phase anti-rollback."""

from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass, field

from . import crypto
from .crypto import CryptoProfile, KeyMaterial
from .errors import FusesNotProvisioned, MalformedPackage, SlotNotWritable, ZeroizedKeystore
from .package import (
    FailedCheck,
    PackageMeta,
    PayloadKind,
    UpdatePackage,
    ValidationReport,
    Verdict,
    build_package,
    parse_package,
    serialize_package,
    validate_package,
)
from .platform import TRUST_ANCHOR, Platform, PlatformState, RegionState

BOOT_WATCHDOG_MS = 5_000
UPDATE_WATCHDOG_MS = 10_000
STAGE_BASE_MS = 5.0
STAGE_MS_PER_KIB = 1.0


class SlotId(enum.IntEnum):
    PRIMARY = 0
    ALTERNATE = 1
    GOLDEN = 2

    @classmethod
    def parse(cls, name: str) -> "SlotId":
        return cls[name.upper()]

    @property
    def label(self) -> str:
        return self.name.capitalize()


class Stage(enum.IntEnum):
    FSBL = 0
    OS = 1
    SHELL = 2

    @property
    def label(self) -> str:
        return "Shell" if self is Stage.SHELL else self.name


class BootOutcome(enum.Enum):
    BOOTED_PRIMARY = "BootedPrimary"
    BOOTED_ALTERNATE = "BootedAlternate"
    BOOTED_GOLDEN = "BootedGolden"
    HALTED = "Halted"


_OUTCOME_FOR = {
    SlotId.PRIMARY: BootOutcome.BOOTED_PRIMARY,
    SlotId.ALTERNATE: BootOutcome.BOOTED_ALTERNATE,
    SlotId.GOLDEN: BootOutcome.BOOTED_GOLDEN,
}


class WatchdogResult(enum.Enum):
    RECOVERY_TRIGGERED = "RecoveryTriggered"


@dataclass
class BootImageSlot:
    """Ordered FSBL/OS/shell images, stored serialized as they sit in flash."""

    slot_id: SlotId
    stage_chain: list[bytes]
    writable: bool = True

    def __post_init__(self):
        if len(self.stage_chain) != len(Stage):
            raise ValueError("a slot holds exactly FSBL, OS and shell images")
        if self.slot_id is SlotId.GOLDEN:
            self.writable = False
            self.stage_chain = tuple(bytes(b) for b in self.stage_chain)
        else:
            self.stage_chain = [bytes(b) for b in self.stage_chain]

    def corrupt(self, stage: int, byte_index: int, mask: int = 0x01) -> None:
        """Flip bits of one stored image (fault-injection helper)."""
        if not self.writable:
            raise SlotNotWritable("the golden slot is immutable")
        blob = bytearray(self.stage_chain[stage])
        blob[byte_index % len(blob)] ^= mask
        self.stage_chain[stage] = bytes(blob)


@dataclass
class BootReport:
    outcome: BootOutcome
    verified_stages: list[tuple[str, str, str]] = field(default_factory=list)
    failures: list[tuple[str, str, str]] = field(default_factory=list)
    elapsed_ms: int = 0

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "verified_stages": [list(v) for v in self.verified_stages],
            "failures": [list(f) for f in self.failures],
            "elapsed_ms": self.elapsed_ms,
        }


def stage_payload(stage: Stage, body: bytes) -> bytes:
    return bytes([int(stage)]) + body


def make_slot(
    slot_id: SlotId,
    version: int,
    device_key: KeyMaterial,
    signer: KeyMaterial,
    profile: CryptoProfile,
    *,
    seq_base: int = 1,
    timestamp_ms: int = 0,
    body_len: int = 2048,
) -> BootImageSlot:
    """Build a signed, encrypted three-stage chain for one slot."""
    chain = []
    for st in Stage:
        body = crypto.digest(f"{slot_id.name}/{st.name}/v{version}".encode()) * (body_len // 48 + 1)
        nonce = crypto.digest(f"nonce/{slot_id.name}/{st.name}/v{version}".encode())[:12]
        meta = PackageMeta(version, PayloadKind.FIRMWARE_STAGE, seq_base + int(st), timestamp_ms, nonce)
        pkg = build_package(stage_payload(st, body[:body_len]), meta, device_key, signer, profile)
        chain.append(serialize_package(pkg))
    return BootImageSlot(slot_id, chain)


def _stage_cost_ms(blob: bytes) -> float:
    return STAGE_BASE_MS + STAGE_MS_PER_KIB * len(blob) / 1024


def _verify_stage(platform: Platform, blob: bytes, stage: Stage, slot: BootImageSlot, device_key):
    """Return (failure codes, plaintext digest or None)."""
    try:
        pkg = parse_package(blob)
    except MalformedPackage:
        return ["Malformed"], None
    # Stored images are not subject to link freshness or sequence rules; the
    # golden slot is exempt from anti-rollback.
    min_version = 0 if slot.slot_id is SlotId.GOLDEN else platform.fw_version
    report = validate_package(
        pkg,
        platform.trusted_keys(),
        stored_version=min_version - 1,
        last_sequence=-1,
        now_ms=pkg.header.timestamp_ms,
        freshness_window_ms=0,
        decrypt_key=device_key,
        regions={},
        profile=platform.profile,
    )
    codes = report.codes()
    if pkg.header.payload_kind is not PayloadKind.FIRMWARE_STAGE:
        codes.append("WrongPayloadKind")
    elif report.accepted and report.plaintext[:1] != bytes([int(stage)]):
        codes.append("WrongStage")
    if codes:
        return codes, None
    return [], pkg.header.plaintext_digest


def _slot_version(blob_chain: Sequence[bytes]) -> int:
    return min(parse_package(b).header.package_version for b in blob_chain)


def run_boot(
    platform: Platform,
    slots: Sequence[BootImageSlot],
    watchdog_timeout_ms: int = BOOT_WATCHDOG_MS,
) -> BootReport:
    """Try Primary, Alternate, Golden in order; boot the first fully verified chain."""
    if not platform.fuses.programmed:
        raise FusesNotProvisioned("program the root key hash before booting")
    try:
        device_key = platform.keystore.device_key(TRUST_ANCHOR)
    except ZeroizedKeystore:
        device_key = None

    platform.reset_fabric()
    by_id = {s.slot_id: s for s in slots}
    if platform.boot_slots is None or len(slots) == len(SlotId):
        platform.boot_slots = list(slots)
    report = BootReport(BootOutcome.HALTED)
    elapsed = 0.0

    for slot_id in SlotId:
        slot = by_id.get(slot_id)
        if slot is None:
            continue
        slot_ok = True
        slot_elapsed = 0.0
        for st in Stage:
            blob = slot.stage_chain[st]
            slot_elapsed += _stage_cost_ms(blob)
            codes, dgst = _verify_stage(platform, blob, st, slot, device_key)
            if not codes and slot_elapsed > watchdog_timeout_ms:
                codes = ["WatchdogTimeout"]
            if codes:
                report.failures.append((slot_id.label, st.label, ",".join(codes)))
                platform.append_event("BootROM", "boot.verify", "fail",
                                      f"slot={slot_id.label} stage={st.label} failed={','.join(codes)}")
                slot_ok = False
                break
            report.verified_stages.append((slot_id.label, st.label, dgst.hex()))
            platform.append_event("BootROM", "boot.verify", "ok", f"slot={slot_id.label} stage={st.label}")
        elapsed += slot_elapsed
        if slot_ok:
            report.outcome = _OUTCOME_FOR[slot_id]
            if slot_id is SlotId.GOLDEN:
                platform.state = PlatformState.SAFE_MODE
            else:
                platform.state = PlatformState.OPERATIONAL
                # Two-phase commit: the counter moves only after a good boot.
                platform.fw_version = max(platform.fw_version, _slot_version(slot.stage_chain))
            platform.booted_slot = slot_id
            break

    platform.clock.advance(elapsed)
    report.elapsed_ms = int(round(elapsed))
    platform.boot_outcome = report.outcome
    if report.outcome is BootOutcome.HALTED:
        platform.state = PlatformState.HALTED
        platform.booted_slot = None
        platform.append_event("BootROM", "boot.result", "Halted", "ALERT: no verifiable boot image")
    else:
        platform.append_event("BootROM", "boot.result", report.outcome.value, f"fw_version={platform.fw_version}")
    return report


def _golden(platform: Platform) -> BootImageSlot | None:
    for s in platform.boot_slots or ():
        if s.slot_id is SlotId.GOLDEN:
            return s
    return None


def watchdog_tick(platform: Platform, now_ms: float) -> WatchdogResult | None:
    """Advance the clock; revert to the golden image if the armed deadline passed."""
    platform.clock.advance_to(now_ms)
    wd = platform.watchdog
    if wd is None or wd.checkpointed or platform.clock.now_ms < wd.deadline_ms:
        return None
    platform.watchdog = None
    on_golden = platform.boot_outcome is BootOutcome.BOOTED_GOLDEN and all(
        r.state is RegionState.EMPTY for r in platform.regions.values()
    )
    if on_golden:
        platform.append_event("watchdog", "watchdog.expire", "already_golden", f"label={wd.label}")
        return None
    platform.append_event("watchdog", "watchdog.expire", WatchdogResult.RECOVERY_TRIGGERED.value,
                          f"label={wd.label}")
    golden = _golden(platform)
    run_boot(platform, [golden] if golden is not None else [])
    return WatchdogResult.RECOVERY_TRIGGERED


def install_firmware(platform: Platform, pkg: UpdatePackage, slot: BootImageSlot) -> ValidationReport:
    """Validate and stage one firmware image; it takes effect at the next boot."""
    if not slot.writable:
        platform.append_event("updater", "firmware.install", "SlotNotWritable", f"slot={slot.slot_id.label}")
        raise SlotNotWritable("the golden slot is immutable")
    if pkg.header.payload_kind is not PayloadKind.FIRMWARE_STAGE:
        raise ValueError("install_firmware takes FirmwareStage packages only")
    try:
        device_key = platform.keystore.device_key(TRUST_ANCHOR)
    except ZeroizedKeystore:
        device_key = None
    report = validate_package(
        pkg,
        platform.trusted_keys(),
        stored_version=platform.fw_version,
        last_sequence=platform.last_sequence,
        now_ms=platform.clock.now_int(),
        freshness_window_ms=platform.freshness_window_ms,
        decrypt_key=device_key,
        regions=platform.region_budgets(),
        profile=platform.profile,
    )
    if report.accepted and report.plaintext[0] >= len(Stage):
        report = ValidationReport(Verdict.REJECTED, (FailedCheck.DIGEST_MISMATCH,), report.checked_at_ms)
    if not report.accepted:
        platform.append_event("updater", "package.validate", "Rejected",
                              f"kind=FirmwareStage slot={slot.slot_id.label} failed={','.join(report.codes())}")
        return report
    stage = Stage(report.plaintext[0])
    slot.stage_chain[stage] = serialize_package(pkg)
    platform.commit_package(pkg.header)
    platform.append_event("updater", "firmware.install", "Accepted",
                          f"slot={slot.slot_id.label} stage={stage.label} version={pkg.header.package_version}")
    return report
