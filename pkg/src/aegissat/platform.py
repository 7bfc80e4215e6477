"""The simulated SoC-FPGA device.

A :class:`Platform` owns the one-time-programmable fuse bank, the volatile
key store, the vFPGA region table with its firewall/interrupt policy, the
logical clock and the append-only event log. It is single-owner: one
scheduler drives it and nothing in here spawns threads.
"""

from __future__ import annotations

import enum
import json
import threading
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, crypto
from .bitstream import BehaviorId, ResourceUsage
from .crypto import CryptoProfile, KeyMaterial
from .errors import (
    AlreadyProgrammed,
    IllegalTransition,
    NotSecureWorld,
    Unavailable,
    UnknownRegion,
    ZeroizedKeystore,
)
from .package import DEFAULT_FRESHNESS_MS, PackageHeader

VIOLATION_THRESHOLD = 3


class SimClock:
    """Logical millisecond clock advanced only by the scheduler."""

    def __init__(self, start_ms: float = 0.0):
        self.now_ms = float(start_ms)

    def advance(self, ms: float) -> float:
        if ms < 0:
            raise ValueError("time cannot run backwards")
        self.now_ms += ms
        return self.now_ms

    def advance_to(self, t_ms: float) -> float:
        if t_ms > self.now_ms:
            self.now_ms = float(t_ms)
        return self.now_ms

    def now_int(self) -> int:
        return int(self.now_ms)


# --- worlds -------------------------------------------------------------------

class World(enum.Enum):
    SECURE = "Secure"
    NORMAL = "Normal"


@dataclass(frozen=True)
class WorldContext:
    world: World
    principal: str


TRUST_ANCHOR = WorldContext(World.SECURE, "TA_FPGA")


def require_secure(ctx: WorldContext) -> None:
    if ctx.world is not World.SECURE:
        raise NotSecureWorld(f"{ctx.principal} runs in the {ctx.world.value} world")


# --- key storage --------------------------------------------------------------

class FuseBank:
    """One-time-programmable storage for the root public-key hash."""

    def __init__(self):
        self._hash: bytes | None = None
        self.write_attempts = 0

    @property
    def programmed(self) -> bool:
        return self._hash is not None

    @property
    def public_key_hash(self) -> bytes | None:
        return self._hash

    def program(self, key_hash: bytes) -> None:
        self.write_attempts += 1
        if self._hash is not None:
            raise AlreadyProgrammed("fuses are one-time programmable")
        if len(key_hash) != crypto.DIGEST_LEN:
            raise ValueError("fuse hash must be a 48-byte digest")
        self._hash = bytes(key_hash)


class VolatileKeyStore:
    """Battery-backed key RAM. Every read path requires the Secure world."""

    def __init__(self):
        self._device_key: KeyMaterial | None = None
        self._session_keys: dict[int, KeyMaterial] = {}
        self.zeroized = False

    def _check(self, ctx: WorldContext) -> None:
        require_secure(ctx)
        if self.zeroized:
            raise ZeroizedKeystore("key store was zeroized after tamper detection")

    def load_device_key(self, ctx: WorldContext, key: KeyMaterial) -> None:
        self._check(ctx)
        self._device_key = key

    def device_key(self, ctx: WorldContext) -> KeyMaterial:
        self._check(ctx)
        if self._device_key is None:
            raise ZeroizedKeystore("no device key loaded")
        return self._device_key

    def put_session_key(self, ctx: WorldContext, region_id: int, key: KeyMaterial) -> None:
        self._check(ctx)
        self._session_keys[region_id] = key

    def session_key(self, ctx: WorldContext, region_id: int) -> KeyMaterial:
        self._check(ctx)
        try:
            return self._session_keys[region_id]
        except KeyError:
            raise ZeroizedKeystore(f"no session key for region {region_id}") from None

    def drop_session_key(self, ctx: WorldContext, region_id: int) -> None:
        require_secure(ctx)
        self._session_keys.pop(region_id, None)

    def holds_any_key(self) -> bool:
        return self._device_key is not None or bool(self._session_keys)

    def zeroize(self) -> None:
        self._device_key = None
        self._session_keys.clear()
        self.zeroized = True


# --- regions --------------------------------------------------------------------

class Perm(enum.IntFlag):
    READ = 1
    WRITE = 2


def parse_op(op) -> Perm:
    if isinstance(op, Perm):
        return op
    return {"read": Perm.READ, "write": Perm.WRITE}[str(op).lower()]


@dataclass(frozen=True)
class AddressRange:
    base: int
    length: int
    perms: Perm

    @property
    def end(self) -> int:
        return self.base + self.length

    def overlaps(self, other: "AddressRange") -> bool:
        return self.base < other.end and other.base < self.end


class RegionState(enum.Enum):
    EMPTY = "Empty"
    CONFIGURING = "Configuring"
    ACTIVE = "Active"
    QUARANTINED = "Quarantined"


_TRANSITIONS = {
    (RegionState.EMPTY, RegionState.CONFIGURING),
    (RegionState.CONFIGURING, RegionState.ACTIVE),
    (RegionState.CONFIGURING, RegionState.EMPTY),  # aborted session
    (RegionState.ACTIVE, RegionState.CONFIGURING),
    (RegionState.ACTIVE, RegionState.QUARANTINED),
    (RegionState.QUARANTINED, RegionState.EMPTY),
}


class Decision(str, enum.Enum):
    ALLOW = "allow"
    DENY = "deny"


@dataclass
class VfpgaRegion:
    region_id: int
    address_ranges: tuple[AddressRange, ...]
    irq_allowlist: frozenset[int]
    budget: ResourceUsage
    state: RegionState = RegionState.EMPTY
    loaded_behavior: BehaviorId | None = None
    loaded_version: int = 0
    owner: str | None = None
    violations: int = 0
    config_image: bytearray | None = field(default=None, repr=False)
    config_crc: int | None = None


def default_layout() -> list[VfpgaRegion]:
    """Static shell plus two vFPGAs with twice the demonstrated usage as budget."""
    from .bitstream import CNN_USAGE, SHIFT_USAGE

    rw = Perm.READ | Perm.WRITE
    return [
        VfpgaRegion(
            1,
            (AddressRange(0xA000_0000, 0x1_0000, rw), AddressRange(0xA010_0000, 0x1000, Perm.READ)),
            frozenset({121, 122}),
            CNN_USAGE.scaled(2),
        ),
        VfpgaRegion(
            2,
            (AddressRange(0xA001_0000, 0x1_0000, rw), AddressRange(0xA010_1000, 0x1000, Perm.READ)),
            frozenset({123}),
            SHIFT_USAGE.scaled(2),
        ),
    ]


def check_disjoint(regions: Iterable[VfpgaRegion]) -> None:
    owned = [(r.region_id, ar) for r in regions for ar in r.address_ranges]
    for i, (ra, a) in enumerate(owned):
        for rb, b in owned[i + 1 :]:
            if ra != rb and a.overlaps(b):
                raise ValueError(f"regions {ra} and {rb} have overlapping address ranges")


# --- event log ------------------------------------------------------------------

EVENT_FIELDS = ("seq", "time_ms", "actor", "action", "outcome", "detail")


@dataclass(frozen=True)
class EventRecord:
    seq: int
    time_ms: int
    actor: str
    action: str
    outcome: str
    detail: str = ""

    def to_json(self) -> str:
        return json.dumps({f: getattr(self, f) for f in EVENT_FIELDS}, separators=(",", ":"))


class EventLog:
    """Append-only forensic log. Readers take immutable snapshots."""

    def __init__(self, start_seq: int = 1):
        self._records: list[EventRecord] = []
        self._next = start_seq
        self._lock = threading.Lock()

    def append(self, time_ms: int, actor: str, action: str, outcome: str, detail: str = "") -> int:
        with self._lock:
            seq = self._next
            self._records.append(EventRecord(seq, int(time_ms), actor, action, outcome, detail))
            self._next += 1
        return seq

    def snapshot(self) -> tuple[EventRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self.snapshot())

    def export_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.snapshot())

    @classmethod
    def from_jsonl(cls, text: str) -> "EventLog":
        log = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            if tuple(d) != EVENT_FIELDS:
                raise ValueError(f"unexpected event fields {tuple(d)}")
            log._records.append(EventRecord(**d))
            log._next = d["seq"] + 1
        return log


# --- platform -------------------------------------------------------------------

class PlatformState(enum.Enum):
    OFF = "Off"
    OPERATIONAL = "Operational"
    SAFE_MODE = "SafeMode"
    HALTED = "Halted"


@dataclass
class Watchdog:
    deadline_ms: float
    label: str
    checkpointed: bool = False


class Platform:
    def __init__(
        self,
        profile: CryptoProfile = crypto.TEST,
        regions: Sequence[VfpgaRegion] | None = None,
        clock: SimClock | None = None,
        freshness_window_ms: int = DEFAULT_FRESHNESS_MS,
        violation_threshold: int = VIOLATION_THRESHOLD,
    ):
        self.profile = profile
        self.clock = clock or SimClock()
        layout = list(regions) if regions is not None else default_layout()
        check_disjoint(layout)
        self.regions: dict[int, VfpgaRegion] = {r.region_id: r for r in layout}
        self.fuses = FuseBank()
        self.keystore = VolatileKeyStore()
        self.log = EventLog()
        self.root_public_key: KeyMaterial | None = None
        self.state = PlatformState.OFF
        self.boot_outcome = None
        self.booted_slot = None
        self.fw_version = 0
        self.boot_slots = None
        self.last_sequence = 0
        self.stored_versions: dict[tuple[int, int], int] = {}
        self.freshness_window_ms = freshness_window_ms
        self.violation_threshold = violation_threshold
        self.watchdog: Watchdog | None = None
        self.timing = None
        self.last_good: dict[int, tuple[bytes, int]] = {}
        self.bist_vectors: dict[int, list] = {}
        self.ai_models: dict[int, bytes] = {}
        self.update_window_open = True
        self.session_key_ids: set[bytes] = set()
        self.next_session_id = 1
        self.rollback_armed: set[int] = set()

    def transition(self, region_id: int, new: RegionState) -> None:
        self._transition(self.region(region_id), new)

    # -- logging
    def append_event(self, actor: str, action: str, outcome: str, detail: str = "") -> int:
        return self.log.append(self.clock.now_int(), actor, action, outcome, detail)

    # -- keys
    def provision_fuses(self, key_hash: bytes) -> None:
        try:
            self.fuses.program(key_hash)
        except AlreadyProgrammed:
            self.append_event("provisioner", "fuse.program", "AlreadyProgrammed")
            raise
        self.append_event("provisioner", "fuse.program", "ok", f"hash={key_hash[:8].hex()}")

    def install_root_key(self, pub: KeyMaterial) -> None:
        """Place the root public key in (untrusted) flash; trust comes from the fuses."""
        self.root_public_key = pub

    def trusted_keys(self) -> dict[bytes, KeyMaterial]:
        pub = self.root_public_key
        if pub is None or not self.fuses.programmed:
            return {}
        if crypto.digest(pub.key_bytes, self.profile) != self.fuses.public_key_hash:
            return {}
        return {pub.key_id: pub}

    def tamper_zeroize(self, ctx: WorldContext) -> None:
        try:
            require_secure(ctx)
        except NotSecureWorld:
            self.append_event(ctx.principal, "tamper.zeroize", "NotSecureWorld")
            raise
        self.keystore.zeroize()
        self.append_event(ctx.principal, "tamper.zeroize", "ok", "volatile keys cleared")

    # -- regions
    def region(self, region_id: int) -> VfpgaRegion:
        try:
            return self.regions[region_id]
        except KeyError:
            raise UnknownRegion(f"no vFPGA region {region_id}") from None

    def region_budgets(self) -> dict[int, ResourceUsage]:
        return {rid: r.budget for rid, r in self.regions.items()}

    def _transition(self, region: VfpgaRegion, new: RegionState) -> None:
        if (region.state, new) not in _TRANSITIONS:
            raise IllegalTransition(f"region {region.region_id}: {region.state.value} -> {new.value}")
        region.state = new

    def allocate_vfpga(self, requested: ResourceUsage, principal: str | None = None) -> int:
        """Lowest-id Empty region whose budget dominates the request.

        A principal that already owns a fitting Active region gets it back
        for in-place reconfiguration (Active -> Configuring).
        """
        if principal is not None:
            for rid in sorted(self.regions):
                r = self.regions[rid]
                if r.state is RegionState.ACTIVE and r.owner == principal and requested.fits(r.budget):
                    self._transition(r, RegionState.CONFIGURING)
                    return rid
        for rid in sorted(self.regions):
            r = self.regions[rid]
            if r.state is RegionState.EMPTY and requested.fits(r.budget):
                self._transition(r, RegionState.CONFIGURING)
                r.owner = principal
                return rid
        self.append_event("TA_FPGA", "vfpga.allocate", "Unavailable", f"request={requested.to_dict()}")
        raise Unavailable("no reconfigurable region fits the request")

    def activate(self, region_id: int, behavior: BehaviorId, version: int, image: bytes) -> None:
        r = self.region(region_id)
        self._transition(r, RegionState.ACTIVE)
        r.loaded_behavior = behavior
        r.loaded_version = version
        r.config_image = bytearray(image)
        r.config_crc = crypto.crc32(image)

    def abort_configuring(self, region_id: int) -> None:
        r = self.region(region_id)
        self._transition(r, RegionState.EMPTY)
        self._clear(r)

    def quarantine_vfpga(self, region_id: int, reason: str = "") -> None:
        r = self.region(region_id)
        try:
            self._transition(r, RegionState.QUARANTINED)
        except IllegalTransition:
            self.append_event("TA_FPGA", "region.quarantine", "IllegalTransition", f"region={region_id}")
            raise
        self.append_event("TA_FPGA", "region.quarantine", "ok", f"region={region_id} reason={reason}")

    def release_vfpga(self, region_id: int) -> None:
        """Localized reset: Quarantined -> Empty, clearing the loaded logic."""
        r = self.region(region_id)
        if r.state is not RegionState.QUARANTINED:
            self.append_event("TA_FPGA", "region.release", "IllegalTransition", f"region={region_id}")
            raise IllegalTransition(f"region {region_id}: only a Quarantined region can be released")
        self._transition(r, RegionState.EMPTY)
        self._clear(r)
        self.append_event("TA_FPGA", "region.release", "ok", f"region={region_id}")

    @staticmethod
    def _clear(r: VfpgaRegion) -> None:
        r.loaded_behavior = None
        r.loaded_version = 0
        r.config_image = None
        r.config_crc = None
        r.violations = 0
        r.owner = None

    def reset_fabric(self) -> None:
        """Power-on reset of the programmable logic (used by boot)."""
        for r in self.regions.values():
            r.state = RegionState.EMPTY
            self._clear(r)

    # -- isolation
    def _violation(self, r: VfpgaRegion) -> None:
        r.violations += 1
        if r.violations >= self.violation_threshold and r.state is RegionState.ACTIVE:
            self.quarantine_vfpga(r.region_id, reason=f"{r.violations} violations")

    def _contained(self, r: VfpgaRegion, addr: int, length: int, op: Perm) -> bool:
        if length <= 0:
            return False
        return any(
            ar.perms & op and ar.base <= addr and addr + length <= ar.end for ar in r.address_ranges
        )

    def firewall_check(self, region_id: int, addr: int, length: int, op) -> Decision:
        r = self.region(region_id)
        op = parse_op(op)
        allowed = r.state is not RegionState.QUARANTINED and self._contained(r, addr, length, op)
        return self._firewall_decide(r, addr, length, op, allowed)

    def _firewall_decide(self, r: VfpgaRegion, addr: int, length: int, op: Perm, allowed: bool) -> Decision:
        if allowed:
            return Decision.ALLOW
        quarantined = r.state is RegionState.QUARANTINED
        self.append_event(
            f"vfpga{r.region_id}",
            "firewall.check",
            "deny",
            f"addr={addr:#x} len={length} op={op.name.lower()}" + (" quarantined" if quarantined else ""),
        )
        if not quarantined:
            self._violation(r)
        return Decision.DENY

    def firewall_check_batch(self, region_ids, addrs, lengths, ops) -> np.ndarray:
        """Sequential-semantics batch of firewall checks.

        Containment is computed in one kernel pass per region; quarantine
        state and logging are then applied in request order, exactly as if
        :meth:`firewall_check` had been called one request at a time.
        """
        region_ids = np.asarray(region_ids, dtype=np.int64)
        addrs = np.asarray(addrs, dtype=np.uint64)
        lengths = np.asarray(lengths, dtype=np.uint64)
        ops = np.asarray([int(parse_op(o)) for o in ops], dtype=np.uint8)
        contained = np.zeros(len(region_ids), dtype=bool)
        for rid in np.unique(region_ids):
            r = self.region(int(rid))
            sel = region_ids == rid
            contained[sel] = _kernels.contains_batch(
                addrs[sel],
                lengths[sel],
                ops[sel],
                [ar.base for ar in r.address_ranges],
                [ar.length for ar in r.address_ranges],
                [int(ar.perms) for ar in r.address_ranges],
            )
        out = np.zeros(len(region_ids), dtype=bool)
        for k in range(len(region_ids)):
            r = self.regions[int(region_ids[k])]
            allowed = bool(contained[k]) and r.state is not RegionState.QUARANTINED
            d = self._firewall_decide(r, int(addrs[k]), int(lengths[k]), Perm(int(ops[k])), allowed)
            out[k] = d is Decision.ALLOW
        return out

    def interrupt_check(self, region_id: int, irq_line: int) -> Decision:
        r = self.region(region_id)
        if r.state is not RegionState.QUARANTINED and irq_line in r.irq_allowlist:
            return Decision.ALLOW
        quarantined = r.state is RegionState.QUARANTINED
        self.append_event(
            f"vfpga{region_id}",
            "interrupt.check",
            "deny",
            f"irq={irq_line}" + (" quarantined" if quarantined else ""),
        )
        if not quarantined:
            self._violation(r)
        return Decision.DENY

    # -- package bookkeeping
    def stored_version(self, kind: int, region_id: int) -> int:
        return self.stored_versions.get((int(kind), region_id), 0)

    def commit_package(self, header: PackageHeader) -> None:
        """Record an Accepted package's sequence number and version."""
        self.last_sequence = max(self.last_sequence, header.sequence_number)
        key = (int(header.payload_kind), header.target_region_id)
        self.stored_versions[key] = max(self.stored_versions.get(key, 0), header.package_version)

    # -- watchdog
    def arm_watchdog(self, timeout_ms: float, label: str) -> None:
        self.watchdog = Watchdog(self.clock.now_ms + timeout_ms, label)
        self.append_event("watchdog", "watchdog.arm", "ok", f"label={label} deadline_ms={self.watchdog.deadline_ms:g}")

    def checkpoint(self) -> None:
        if self.watchdog is not None:
            self.watchdog.checkpointed = True
            self.append_event("watchdog", "watchdog.checkpoint", "ok", f"label={self.watchdog.label}")
            self.watchdog = None
