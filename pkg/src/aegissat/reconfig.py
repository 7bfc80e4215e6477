"""Secure partial-reconfiguration workflow run by the FPGA trust anchor.

The nine steps, each leaving one event record and one trace entry:

1. request initiation     (app -> TA, command frame)
2. resource allocation    (lowest fitting vFPGA)
3. session key exchange   (fresh AES key, RSA-encapsulated to the app)
4. bitstream preparation  (app encrypts + signs under the session key)
5. bitstream transfer     (package frame; location/size bound as AAD)
6. decryption/verification (pipe check, full package validation, trojan scan)
7. configuration instruction (TA -> shell: image, location, size)
8. partial reconfiguration (ICAP streaming, timed by the calibrated model)
9. acknowledgment         (shell -> TA -> app)
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from . import behavioral, crypto
from .behavioral import Direction, ShiftParams
from .bitstream import BehaviorId, ResourceUsage, SimBitstream, TrojanScanReport, trojan_scan
from .crypto import CryptoProfile, KeyMaterial
from .errors import (
    MalformedPackage,
    OverBudget,
    RegionNotActive,
    RegionNotConfiguring,
    Unavailable,
    ZeroizedKeystore,
)
from .link import Channel, MessageKind, ProtocolMessage, transmit
from .package import (
    FailedCheck,
    PackageMeta,
    PayloadKind,
    build_package,
    parse_package,
    serialize_package,
    validate_package,
)
from .platform import TRUST_ANCHOR, Platform, RegionState, SimClock

__all__ = [
    "IcapTimingModel",
    "RegionTiming",
    "ReconfigSession",
    "SessionState",
    "AppClient",
    "TrojanScanReport",
    "trojan_scan",
    "establish_session",
    "handle_accel_request",
    "icap_program",
    "run_bist",
    "golden_vectors",
    "scrub_regions",
    "reload_region",
    "calibrated_timing",
]

STEP_NAMES = {
    1: "RequestInitiation",
    2: "ResourceAllocation",
    3: "SessionKeyExchange",
    4: "BitstreamPreparation",
    5: "BitstreamTransfer",
    6: "DecryptionAndVerification",
    7: "ConfigurationInstruction",
    8: "PartialReconfiguration",
    9: "Acknowledgment",
}
STEP_ACTIONS = {
    1: "reconfig.request",
    2: "reconfig.allocate",
    3: "reconfig.session_key",
    4: "reconfig.prepare",
    5: "reconfig.transfer",
    6: "reconfig.verify",
    7: "reconfig.configure",
    8: "reconfig.program",
    9: "reconfig.ack",
}
STEP_ACTORS = {1: "AppX", 2: "TA_FPGA", 3: "TA_FPGA", 4: "AppX", 5: "AppX", 6: "TA_FPGA",
               7: "TA_FPGA", 8: "Shell", 9: "Shell"}


class SessionState(enum.Enum):
    REQUESTED = "Requested"
    ALLOCATED = "Allocated"
    KEYED = "Keyed"
    TRANSFERRED = "Transferred"
    VERIFIED = "Verified"
    PROGRAMMED = "Programmed"
    ACKNOWLEDGED = "Acknowledged"
    ABORTED = "Aborted"


# State reached after each step completes.
_STATE_AFTER = {
    1: SessionState.REQUESTED,
    2: SessionState.ALLOCATED,
    3: SessionState.KEYED,
    4: SessionState.KEYED,
    5: SessionState.TRANSFERRED,
    6: SessionState.VERIFIED,
    7: SessionState.VERIFIED,
    8: SessionState.PROGRAMMED,
    9: SessionState.ACKNOWLEDGED,
}


@dataclass(frozen=True)
class TraceStep:
    step: int
    actor: str
    time_ms: float


@dataclass
class ReconfigSession:
    session_id: int
    app_principal: str
    region_id: int | None = None
    session_key: KeyMaterial | None = field(default=None, repr=False)
    state: SessionState = SessionState.REQUESTED
    abort_reason: str | None = None
    trace: list[TraceStep] = field(default_factory=list)
    duration_ms: float | None = None
    scan: TrojanScanReport | None = None

    @property
    def steps(self) -> list[int]:
        return [t.step for t in self.trace]

    def describe(self) -> str:
        if self.state is SessionState.ABORTED:
            return f"Aborted({self.abort_reason})"
        return self.state.value


# --- ICAP timing ----------------------------------------------------------------

@dataclass(frozen=True)
class RegionTiming:
    base_overhead_ms: float
    throughput_bytes_per_ms: float
    jitter_sigma_ms: float = 0.0

    def __post_init__(self):
        if self.base_overhead_ms < 0 or self.throughput_bytes_per_ms <= 0 or self.jitter_sigma_ms < 0:
            raise ValueError("timing parameters must be non-negative with positive throughput")


class IcapTimingModel:
    """duration = base + size / throughput + jitter, jitter ~ N(0, sigma) cut at +-3 sigma.

    Each region draws from its own generator, seeded from ``region_seeds``
    when given and from ``(rng_seed, region_id)`` otherwise.
    """

    def __init__(self, params: dict[int, RegionTiming], rng_seed: int = 0,
                 region_seeds: dict[int, int] | None = None):
        self.params = dict(params)
        self.rng_seed = int(rng_seed)
        self.region_seeds = dict(region_seeds or {})
        self.reset()

    def reset(self) -> None:
        self._rngs = {
            rid: np.random.default_rng(self.region_seeds.get(rid, [self.rng_seed, rid]))
            for rid in self.params
        }

    def mean_ms(self, region_id: int, body_len: int) -> float:
        p = self.params[region_id]
        return p.base_overhead_ms + body_len / p.throughput_bytes_per_ms

    def sample(self, region_id: int, body_len: int) -> float:
        p = self.params[region_id]
        jitter = 0.0
        if p.jitter_sigma_ms > 0:
            while True:
                z = self._rngs[region_id].standard_normal()
                if abs(z) <= 3.0:
                    break
            jitter = z * p.jitter_sigma_ms
        duration = self.mean_ms(region_id, body_len) + jitter
        # Guards degenerate configurations where jitter could cross zero.
        return max(duration, 1e-6)


# Simulator constants: fixed body sizes per region, with base overhead and a
# shared ICAP throughput solved so the model mean hits the measured mean.
CALIBRATION_BODY_BYTES = {1: 450_000, 2: 480_000}
_MEASURED = {1: (495.21, 8.64), 2: (528.21, 0.27)}
_THROUGHPUT = (CALIBRATION_BODY_BYTES[2] - CALIBRATION_BODY_BYTES[1]) / (_MEASURED[2][0] - _MEASURED[1][0])
_BASE = _MEASURED[1][0] - CALIBRATION_BODY_BYTES[1] / _THROUGHPUT
CALIBRATION = {
    rid: RegionTiming(_BASE, _THROUGHPUT, sigma) for rid, (_, sigma) in _MEASURED.items()
}


def calibrated_timing(seed: int = 0) -> IcapTimingModel:
    return IcapTimingModel(CALIBRATION, seed)


# --- sessions -------------------------------------------------------------------

def establish_session(platform: Platform, region_id: int, app_pub: KeyMaterial, rng) -> tuple[int, bytes]:
    """Generate a fresh session key, keep it in key RAM, encapsulate it to the app."""
    if platform.keystore.zeroized:
        raise ZeroizedKeystore("cannot establish a session after zeroization")
    while True:
        key = crypto.generate_symmetric_key(rng)
        if key.key_id not in platform.session_key_ids:
            break
    platform.session_key_ids.add(key.key_id)
    platform.keystore.put_session_key(TRUST_ANCHOR, region_id, key)
    sid = platform.next_session_id
    platform.next_session_id += 1
    return sid, crypto.encapsulate_key(key, app_pub, platform.profile)


@dataclass
class AppClient:
    """Normal-world application (and, in the link demo, the ground station).

    Holds its own encapsulation key pair and the package-signing key whose
    hash is fused into the device.
    """

    principal: str
    keypair: tuple[KeyMaterial, KeyMaterial]
    signer: KeyMaterial
    profile: CryptoProfile = crypto.TEST
    rng: object = None
    seq: int = 0
    versions: dict[int, int] = field(default_factory=dict)
    inbox: list[ProtocolMessage] = field(default_factory=list)
    session_key: KeyMaterial | None = field(default=None, repr=False)

    def next_seq(self) -> int:
        self.seq += 1
        return self.seq

    def next_version(self, region_id: int) -> int:
        v = self.versions.get(region_id, 0) + 1
        self.versions[region_id] = v
        return v

    def accept_session(self, blob: bytes) -> None:
        self.session_key = crypto.decapsulate_key(blob, self.keypair[0], self.profile)

    def prepare(self, payload: bytes, region_id: int, now_ms: int, version: int | None = None) -> bytes:
        nonce = crypto._rand_bytes(self.rng, crypto.NONCE_LEN)
        meta = PackageMeta(
            package_version=self.next_version(region_id) if version is None else version,
            payload_kind=PayloadKind.PARTIAL_BITSTREAM,
            sequence_number=self.next_seq(),
            timestamp_ms=now_ms,
            nonce=nonce,
            target_region_id=region_id,
        )
        pkg = build_package(payload, meta, self.session_key, self.signer, self.profile)
        return serialize_package(pkg)


def icap_program(
    platform: Platform,
    region_id: int,
    bitstream: SimBitstream,
    timing: IcapTimingModel,
    clock: SimClock | None = None,
    version: int = 0,
) -> float:
    """Stream a verified bitstream into a Configuring region; returns the duration."""
    r = platform.region(region_id)
    if r.state is not RegionState.CONFIGURING:
        raise RegionNotConfiguring(f"region {region_id} is {r.state.value}")
    if not bitstream.resource_usage.fits(r.budget):
        raise OverBudget(f"bitstream exceeds region {region_id} budget")
    duration = timing.sample(region_id, len(bitstream.body))
    (clock or platform.clock).advance(duration)
    platform.activate(region_id, bitstream.behavior_id, version, bitstream.encode())
    return duration


# --- BIST -------------------------------------------------------------------------

@dataclass(frozen=True)
class BistResult:
    passed: bool
    mismatches: tuple[int, ...] = ()


def _evaluate(image: bytes, inputs: list):
    bs = SimBitstream.decode(image)
    if bs.behavior_id is BehaviorId.CNN_V1:
        kernel, shift = behavioral.decode_cnn_params(bs.behavior_params)
        out = behavioral.cnn_forward_batch(np.asarray(inputs, dtype=np.int8).reshape(-1, 6, 6), kernel, shift)
        return [o.tolist() for o in out]
    if bs.behavior_id is BehaviorId.SHIFT_V1:
        direction, amount = behavioral.decode_shift_params(bs.behavior_params)
        return [behavioral.shift_exec(ShiftParams(int(v), direction, amount)) for v in inputs]
    raise ValueError("opaque bitstreams carry no behavioural model")


def golden_vectors(bitstream: SimBitstream, n: int, rng: np.random.Generator) -> list[tuple]:
    """Ground-side baselines from the plain reference models."""
    if bitstream.behavior_id is BehaviorId.CNN_V1:
        kernel, shift = behavioral.decode_cnn_params(bitstream.behavior_params)
        out = []
        for _ in range(n):
            x = rng.integers(-128, 128, size=(6, 6)).tolist()
            out.append((x, behavioral.cnn_reference(kernel, shift, x)))
        return out
    if bitstream.behavior_id is BehaviorId.SHIFT_V1:
        direction, amount = behavioral.decode_shift_params(bitstream.behavior_params)
        out = []
        for _ in range(n):
            v = int(rng.integers(0, 2**32))
            ref = (v << amount) & 0xFFFFFFFF if direction is Direction.LEFT else v >> amount
            out.append((v, ref))
        return out
    raise ValueError("opaque bitstreams carry no behavioural model")


def run_bist(platform: Platform, region_id: int, vectors: list[tuple]) -> BistResult:
    """Run golden vectors through the loaded logic; quarantine on any mismatch."""
    r = platform.region(region_id)
    if r.state is not RegionState.ACTIVE or r.config_image is None:
        raise RegionNotActive(f"region {region_id} is {r.state.value}")
    inputs = [v[0] for v in vectors]
    try:
        got = _evaluate(bytes(r.config_image), inputs)
    except ValueError:
        got = [None] * len(vectors)
    mismatches = tuple(i for i, (g, (_, want)) in enumerate(zip(got, vectors)) if g != want)
    if not mismatches:
        platform.append_event("Shell", "bist.run", "pass", f"region={region_id} vectors={len(vectors)}")
        return BistResult(True)
    platform.append_event("Shell", "bist.run", "fail", f"region={region_id} mismatches={len(mismatches)}")
    platform.quarantine_vfpga(region_id, reason="bist")
    platform.rollback_armed.add(region_id)
    return BistResult(False, mismatches)


# --- SEU scrubbing and reload ---------------------------------------------------

def reload_region(platform: Platform, region_id: int) -> float:
    """Localized reset of a quarantined region and reload of its last accepted image."""
    image, version = platform.last_good[region_id]
    platform.release_vfpga(region_id)
    platform.transition(region_id, RegionState.CONFIGURING)
    duration = icap_program(platform, region_id, SimBitstream.decode(image), platform.timing, version=version)
    platform.append_event("TA_FPGA", "region.reload", "ok", f"region={region_id} duration_ms={duration!r}")
    platform.rollback_armed.discard(region_id)
    return duration


def scrub_regions(platform: Platform, reload: bool = True) -> list[int]:
    """CRC scrub of every Active region; mismatches are quarantined and reloaded."""
    hit = []
    for rid in sorted(platform.regions):
        r = platform.regions[rid]
        if r.state is not RegionState.ACTIVE or r.config_image is None:
            continue
        crc = crypto.crc32(bytes(r.config_image))
        if crc == r.config_crc:
            continue
        hit.append(rid)
        platform.append_event("scrubber", "scrub.check", FailedCheck.CRC_MISMATCH.value,
                              f"region={rid} expected={r.config_crc:08x} got={crc:08x}")
        platform.quarantine_vfpga(rid, reason="crc")
        if reload and rid in platform.last_good:
            reload_region(platform, rid)
            vectors = platform.bist_vectors.get(rid)
            if vectors:
                run_bist(platform, rid, vectors)
    return hit


# --- the workflow ---------------------------------------------------------------

class _Abort(Exception):
    def __init__(self, step: int, reason: str):
        super().__init__(reason)
        self.step = step
        self.reason = reason


def handle_accel_request(
    platform: Platform,
    app: AppClient,
    payload: bytes,
    channel: Channel,
    *,
    rng=None,
    timing: IcapTimingModel | None = None,
    version: int | None = None,
    fault_at_step: int | None = None,
    before_step=None,
) -> ReconfigSession:
    """Drive one reconfiguration request from the app through all nine steps.

    ``payload`` is the app's plaintext SimBitstream. ``fault_at_step`` forces
    a failure at that step; ``before_step(k)`` is a hook called before step
    ``k`` runs (used to inject tampering or zeroization mid-session).
    Failures never raise: they end in an Aborted session with a reason.
    """
    timing = timing or platform.timing
    clock = platform.clock
    session = ReconfigSession(session_id=0, app_principal=app.principal)

    def step(k: int, outcome: str = "ok", detail: str = "") -> None:
        session.trace.append(TraceStep(k, STEP_ACTORS[k], clock.now_ms))
        platform.append_event(STEP_ACTORS[k], STEP_ACTIONS[k], outcome,
                              f"session={session.session_id} step={k} {STEP_NAMES[k]}" + (f" {detail}" if detail else ""))
        if outcome == "ok":
            session.state = _STATE_AFTER[k]

    def guard(k: int) -> None:
        if before_step is not None:
            before_step(k)
        if fault_at_step == k:
            raise _Abort(k, f"InjectedFault@{k}")

    try:
        bitstream = SimBitstream.decode(payload)
        # 1. request initiation
        guard(1)
        req = {"op": "accel_request", "principal": app.principal, "budget": bitstream.resource_usage.to_dict()}
        transmit(channel, channel.make_message(MessageKind.COMMAND, json.dumps(req, sort_keys=True).encode()))
        got = [d for d in channel.poll() if d.ok and d.message.kind is MessageKind.COMMAND]
        if not got:
            raise _Abort(1, "RequestLost")
        step(1)

        # 2. allocation
        guard(2)
        try:
            rid = platform.allocate_vfpga(bitstream.resource_usage, app.principal)
        except Unavailable:
            raise _Abort(2, "Unavailable") from None
        session.region_id = rid
        step(2, detail=f"region={rid}")

        # 3. session key exchange
        guard(3)
        try:
            sid, blob = establish_session(platform, rid, app.keypair[1], rng)
        except ZeroizedKeystore:
            raise _Abort(3, "ZeroizedKeystore") from None
        session.session_id = sid
        session.session_key = platform.keystore.session_key(TRUST_ANCHOR, rid)
        app.accept_session(blob)
        step(3)

        # 4. preparation
        guard(4)
        pkg_bytes = app.prepare(payload, rid, clock.now_int(), version)
        step(4, detail=f"size={len(payload)}")

        # 5. transfer
        guard(5)
        transmit(channel, channel.make_message(MessageKind.PACKAGE_TRANSFER, pkg_bytes))
        step(5, detail=f"region={rid} size={len(payload)}")

        # 6. decrypt + verify
        guard(6)
        try:
            key = platform.keystore.session_key(TRUST_ANCHOR, rid)
        except ZeroizedKeystore:
            key = None
        accepted = None
        first_failure = None
        budgets = {rid: platform.region(rid).budget}
        for d in channel.poll():
            if d.ok and d.message.kind is not MessageKind.PACKAGE_TRANSFER:
                continue
            codes = [d.error] if not d.ok else None
            if codes is None:
                try:
                    pkg = parse_package(d.message.body)
                except MalformedPackage:
                    codes = ["Malformed"]
            if codes is None:
                h = pkg.header
                # Duplicates arriving after acceptance fail the sequence rule here.
                report = validate_package(
                    pkg, platform.trusted_keys(),
                    platform.stored_version(h.payload_kind, rid), platform.last_sequence,
                    clock.now_int(), platform.freshness_window_ms, key, budgets, platform.profile,
                )
                if report.accepted:
                    platform.commit_package(h)
                    accepted = accepted or (report.plaintext, h)
                    continue
                codes = report.codes()
            platform.append_event("TA_FPGA", "package.validate", "Rejected",
                                  f"session={sid} failed={','.join(codes)}")
            first_failure = first_failure or codes
        if accepted is None:
            raise _Abort(6, ",".join(first_failure) if first_failure else "TransferLost")
        plaintext, header = accepted
        bitstream = SimBitstream.decode(plaintext)
        session.scan = trojan_scan(bitstream)
        step(6, detail=f"scan={session.scan.verdict.value}")

        # 7. configuration instruction to the shell
        guard(7)
        step(7, detail=f"region={rid} size={len(plaintext)}")

        # 8. ICAP programming
        guard(8)
        try:
            duration = icap_program(platform, rid, bitstream, timing, version=header.package_version)
        except (OverBudget, RegionNotConfiguring) as exc:
            raise _Abort(8, type(exc).__name__) from None
        session.duration_ms = duration
        platform.last_good[rid] = (plaintext, header.package_version)
        step(8, detail=f"region={rid} duration_ms={duration!r}")

        # 9. acknowledgment
        guard(9)
        app.inbox.append(ProtocolMessage(0, clock.now_int(), MessageKind.ACK, f"session={sid}".encode()))
        platform.keystore.drop_session_key(TRUST_ANCHOR, rid)
        step(9, detail=f"region={rid}")
        session.session_key = None
        return session

    except _Abort as ab:
        session.trace.append(TraceStep(ab.step, STEP_ACTORS[ab.step], clock.now_ms))
        platform.append_event(STEP_ACTORS[ab.step], STEP_ACTIONS[ab.step], "fail",
                              f"session={session.session_id} step={ab.step} reason={ab.reason}")
        _abort(platform, session, app, ab.reason)
        return session


def _abort(platform: Platform, session: ReconfigSession, app: AppClient, reason: str) -> None:
    rid = session.region_id
    if rid is not None:
        r = platform.region(rid)
        if r.state is RegionState.CONFIGURING:
            platform.abort_configuring(rid)
        platform.keystore.drop_session_key(TRUST_ANCHOR, rid)
    session.state = SessionState.ABORTED
    session.abort_reason = reason
    session.session_key = None
    app.session_key = None
    app.inbox.append(ProtocolMessage(0, platform.clock.now_int(), MessageKind.NACK, reason.encode()))
    platform.append_event("TA_FPGA", "reconfig.abort", "Aborted",
                          f"session={session.session_id} region={rid} reason={reason}")
