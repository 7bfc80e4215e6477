"""Simulated TT&C link and inter-world message path with adversary injection.

Frames travel through a pre-established secure pipe: every frame is sealed
with AES-GCM under the pipe key, nonce = channel id + message sequence
number, AAD = frame header. The adversary acts on sealed frames, so any
in-flight modification surfaces at the receiver as an authentication
failure.

Delivery is scheduled, never blocking: a transmitted frame sits in the
channel queue until the scheduler polls at or after its due time.
"""

from __future__ import annotations

import enum
import heapq
import json
import struct
from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import numpy as np

from . import crypto
from .crypto import KeyMaterial
from .errors import AuthFailure, ChannelClosed, MalformedPackage, RegionNotActive, ZeroizedKeystore
from .package import FailedCheck, PayloadKind, parse_package, validate_package
from .platform import TRUST_ANCHOR, Platform, RegionState, SimClock

_FRAME_HDR = struct.Struct("<QQBI")


class MessageKind(enum.IntEnum):
    COMMAND = 0
    PACKAGE_TRANSFER = 1
    ACK = 2
    NACK = 3
    PROBE = 4


@dataclass(frozen=True)
class ProtocolMessage:
    msg_seq: int
    sent_ms: int
    kind: MessageKind
    body: bytes = b""


@dataclass(frozen=True)
class AdversaryConfig:
    drop_prob: float = 0.0
    duplicate_prob: float = 0.0
    tamper_prob: float = 0.0
    delay_range_ms: tuple[int, int] = (0, 0)
    seu_bitflip_prob_per_frame: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("drop_prob", "duplicate_prob", "tamper_prob", "seu_bitflip_prob_per_frame"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} is not a probability")
        lo, hi = self.delay_range_ms
        if lo < 0 or hi < lo:
            raise ValueError(f"bad delay range {self.delay_range_ms}")
        object.__setattr__(self, "delay_range_ms", (int(lo), int(hi)))

    @classmethod
    def from_dict(cls, d: dict | None) -> "AdversaryConfig":
        d = dict(d or {})
        if "delay_range_ms" in d:
            d["delay_range_ms"] = tuple(d["delay_range_ms"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delay_range_ms"] = list(self.delay_range_ms)
        return d


NULL_ADVERSARY = AdversaryConfig()


class FrameAction(str, enum.Enum):
    DELIVERED = "Delivered"
    DROPPED = "Dropped"
    DUPLICATED = "Duplicated"
    TAMPERED = "Tampered"
    DELAYED = "Delayed"
    BITFLIPPED = "Bitflipped"


@dataclass(frozen=True)
class TraceRecord:
    channel: str
    original_seq: int
    action: FrameAction
    arg: int | None = None

    def to_json(self) -> str:
        return json.dumps(
            {"channel": self.channel, "original_seq": self.original_seq, "action": self.action.value, "arg": self.arg},
            separators=(",", ":"),
        )


class DeliveryTrace:
    def __init__(self):
        self.records: list[TraceRecord] = []

    def add(self, rec: TraceRecord) -> None:
        self.records.append(rec)

    def counts(self) -> dict[str, int]:
        out = {a.value: 0 for a in FrameAction}
        for r in self.records:
            out[r.action.value] += 1
        return out

    def export_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)


@dataclass(frozen=True)
class Delivery:
    due_ms: float
    frame: bytes
    message: ProtocolMessage | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.message is not None


class Channel:
    """One direction of a link between two endpoints."""

    def __init__(
        self,
        name: str,
        clock: SimClock,
        pipe_key: KeyMaterial,
        adversary: AdversaryConfig = NULL_ADVERSARY,
        trace: DeliveryTrace | None = None,
        channel_id: int = 0,
    ):
        self.name = name
        self.clock = clock
        self.pipe_key = pipe_key
        self.channel_id = channel_id & 0xFF
        self.trace = trace if trace is not None else DeliveryTrace()
        self.is_open = True
        self.captured: list[bytes] = []
        self._queue: list[tuple[float, int, bytes]] = []
        self._order = 0
        self._last_sent_seq = 0
        self._seq = 0
        self.configure(adversary)

    def configure(self, cfg: AdversaryConfig) -> None:
        self.adversary = cfg
        self._rng = np.random.default_rng(cfg.rng_seed)

    def close(self) -> None:
        self.is_open = False

    def next_seq(self) -> int:
        self._seq = max(self._seq, self._last_sent_seq) + 1
        return self._seq

    def make_message(self, kind: MessageKind, body: bytes = b"", sent_ms: int | None = None) -> ProtocolMessage:
        sent = self.clock.now_int() if sent_ms is None else sent_ms
        return ProtocolMessage(self.next_seq(), sent, kind, bytes(body))

    def _nonce(self, seq: int) -> bytes:
        return bytes([self.channel_id, 0, 0, 0]) + seq.to_bytes(8, "little")

    def seal(self, msg: ProtocolMessage) -> bytes:
        hdr = _FRAME_HDR.pack(msg.msg_seq, msg.sent_ms, int(msg.kind), len(msg.body))
        return hdr + crypto.aead_encrypt(self.pipe_key, self._nonce(msg.msg_seq), msg.body, hdr)

    def open_frame(self, frame: bytes) -> ProtocolMessage:
        if len(frame) < _FRAME_HDR.size + crypto.TAG_LEN:
            raise AuthFailure("frame truncated")
        seq, sent, kind, blen = _FRAME_HDR.unpack_from(frame, 0)
        hdr = frame[: _FRAME_HDR.size]
        body = crypto.aead_decrypt(self.pipe_key, self._nonce(seq), frame[_FRAME_HDR.size :], hdr)
        if len(body) != blen or kind not in MessageKind._value2member_map_:
            raise AuthFailure("frame header inconsistent")
        return ProtocolMessage(seq, sent, MessageKind(kind), body)

    def _enqueue(self, due: float, frame: bytes) -> None:
        heapq.heappush(self._queue, (due, self._order, frame))
        self._order += 1

    def pending(self) -> int:
        return len(self._queue)

    def poll(self, now_ms: float | None = None) -> list[Delivery]:
        """Pop and open every frame due at or before ``now_ms``."""
        now = self.clock.now_ms if now_ms is None else now_ms
        out = []
        while self._queue and self._queue[0][0] <= now:
            due, _, frame = heapq.heappop(self._queue)
            try:
                out.append(Delivery(due, frame, self.open_frame(frame)))
            except AuthFailure:
                out.append(Delivery(due, frame, None, FailedCheck.AUTH_FAILURE.value))
        return out


def configure_adversary(channel: Channel, cfg: AdversaryConfig) -> None:
    """Replace the channel's adversary; affects subsequently sent frames only."""
    channel.configure(cfg)


def transmit(channel: Channel, msg: ProtocolMessage, at_ms: float | None = None) -> None:
    if not channel.is_open:
        raise ChannelClosed(channel.name)
    if msg.msg_seq <= channel._last_sent_seq:
        raise ValueError(f"msg_seq {msg.msg_seq} does not increase (last {channel._last_sent_seq})")
    channel._last_sent_seq = msg.msg_seq
    sent = channel.clock.now_ms if at_ms is None else at_ms
    frame = bytearray(channel.seal(msg))
    cfg, rng, rec = channel.adversary, channel._rng, channel.trace.add
    u = rng.random(4)  # drop, tamper, bitflip, duplicate: fixed draw count per frame
    if u[0] < cfg.drop_prob:
        rec(TraceRecord(channel.name, msg.msg_seq, FrameAction.DROPPED))
        channel.captured.append(bytes(frame))
        return
    if u[1] < cfg.tamper_prob:
        idx = int(rng.integers(len(frame)))
        frame[idx] ^= int(rng.integers(1, 256))
        rec(TraceRecord(channel.name, msg.msg_seq, FrameAction.TAMPERED, idx))
    if u[2] < cfg.seu_bitflip_prob_per_frame:
        bit = int(rng.integers(len(frame) * 8))
        frame[bit // 8] ^= 1 << (bit % 8)
        rec(TraceRecord(channel.name, msg.msg_seq, FrameAction.BITFLIPPED, bit))
    lo, hi = cfg.delay_range_ms
    delay = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
    if delay:
        rec(TraceRecord(channel.name, msg.msg_seq, FrameAction.DELAYED, delay))
    frame = bytes(frame)
    channel.captured.append(frame)
    channel._enqueue(sent + delay, frame)
    if u[3] < cfg.duplicate_prob:
        channel._enqueue(sent + delay, frame)
        rec(TraceRecord(channel.name, msg.msg_seq, FrameAction.DUPLICATED))
    else:
        rec(TraceRecord(channel.name, msg.msg_seq, FrameAction.DELIVERED))


class ReliableStatus(str, enum.Enum):
    ACKED = "Acked"
    GAVE_UP = "GaveUp"


@dataclass(frozen=True)
class ReliableResult:
    status: ReliableStatus
    attempts: int
    sent_seqs: tuple[int, ...] = ()


def transmit_reliable(
    channel: Channel,
    msg: ProtocolMessage,
    max_retries: int,
    ack_timeout_ms: float,
    reply_channel: Channel | None = None,
    on_receive: Callable[[ProtocolMessage], None] | None = None,
) -> ReliableResult:
    """Send until acknowledged or ``max_retries`` retransmissions are spent.

    Each retransmission carries a fresh ``msg_seq``. The receiving end acks
    every intact frame at its arrival time over ``reply_channel`` (or over
    a lossless return path when none is given).
    """
    if not channel.is_open:
        raise ChannelClosed(channel.name)
    clock = channel.clock
    sent: list[int] = []
    attempt_msg = msg
    for attempt in range(1, max_retries + 2):
        t0 = clock.now_ms
        if attempt > 1:
            attempt_msg = ProtocolMessage(channel.next_seq(), clock.now_int(), msg.kind, msg.body)
        transmit(channel, attempt_msg)
        sent.append(attempt_msg.msg_seq)
        deadline = t0 + ack_timeout_ms
        acked_at = None
        for d in channel.poll(deadline):
            if not d.ok or d.message.msg_seq not in sent:
                continue
            if on_receive is not None:
                on_receive(d.message)
            if reply_channel is None:
                acked_at = d.due_ms if acked_at is None else min(acked_at, d.due_ms)
            else:
                ack = reply_channel.make_message(MessageKind.ACK, d.message.msg_seq.to_bytes(8, "little"),
                                                 sent_ms=int(d.due_ms))
                transmit(reply_channel, ack, at_ms=d.due_ms)
        if reply_channel is not None:
            for a in reply_channel.poll(deadline):
                if a.ok and a.message.kind is MessageKind.ACK \
                        and int.from_bytes(a.message.body, "little") in sent:
                    acked_at = a.due_ms if acked_at is None else min(acked_at, a.due_ms)
        if acked_at is not None:
            clock.advance_to(acked_at)
            return ReliableResult(ReliableStatus.ACKED, attempt, tuple(sent))
        clock.advance_to(deadline)
    return ReliableResult(ReliableStatus.GAVE_UP, max_retries + 1, tuple(sent))


def inject_seu(platform: Platform, region_id: int, bit_index: int) -> None:
    """Flip one bit of an Active region's stored configuration image."""
    r = platform.region(region_id)
    if r.state is not RegionState.ACTIVE or r.config_image is None:
        raise RegionNotActive(f"region {region_id} is {r.state.value}")
    bit = bit_index % (len(r.config_image) * 8)
    r.config_image[bit // 8] ^= 1 << (bit % 8)
    platform.append_event("radiation", "seu.inject", "ok", f"region={region_id} bit={bit}")


@dataclass
class ReceiverStats:
    frames: int = 0
    accepted: int = 0
    rejected: int = 0
    rejected_codes: dict[str, int] = field(default_factory=dict)
    accepted_seqs: list[int] = field(default_factory=list)


class PackageReceiver:
    """Satellite end of the TT&C link.

    Rejects any frame that fails the pipe check or repeats a frame sequence
    number, then validates package transfers against platform state using
    the device key. Every rejection produces exactly one event record.
    """

    def __init__(self, platform: Platform, actor: str = "TT&C"):
        self.platform = platform
        self.actor = actor
        self.last_msg_seq = 0
        self.stats = ReceiverStats()

    def _reject(self, action: str, codes: list[str], detail: str = "") -> str:
        st = self.stats
        st.rejected += 1
        for c in codes:
            st.rejected_codes[c] = st.rejected_codes.get(c, 0) + 1
        self.platform.append_event(self.actor, action, "Rejected", (detail + " " if detail else "") + "failed=" + ",".join(codes))
        return "Rejected"

    def handle(self, d: Delivery) -> str:
        self.stats.frames += 1
        if not d.ok:
            return self._reject("link.frame", [d.error])
        msg = d.message
        if msg.msg_seq <= self.last_msg_seq:
            return self._reject("link.frame", [FailedCheck.REPLAYED_SEQUENCE.value],
                                f"kind={msg.kind.name} msg_seq={msg.msg_seq}")
        self.last_msg_seq = msg.msg_seq
        if msg.kind is not MessageKind.PACKAGE_TRANSFER:
            self.stats.accepted += 1
            self.stats.accepted_seqs.append(msg.msg_seq)
            self.platform.append_event(self.actor, "command.accept", "ok", f"kind={msg.kind.name} msg_seq={msg.msg_seq}")
            return "Accepted"
        return self._handle_package(msg)

    def _handle_package(self, msg: ProtocolMessage) -> str:
        p = self.platform
        try:
            pkg = parse_package(msg.body)
        except MalformedPackage as exc:
            return self._reject("package.validate", ["Malformed"], str(exc))
        try:
            key = p.keystore.device_key(TRUST_ANCHOR)
        except ZeroizedKeystore:
            key = None
        h = pkg.header
        report = validate_package(
            pkg,
            p.trusted_keys(),
            p.stored_version(h.payload_kind, h.target_region_id),
            p.last_sequence,
            p.clock.now_int(),
            p.freshness_window_ms,
            key,
            p.region_budgets(),
            p.profile,
        )
        if not report.accepted:
            return self._reject("package.validate", report.codes(), f"seq={h.sequence_number}")
        p.commit_package(h)
        if h.payload_kind is PayloadKind.AI_MODEL:
            p.ai_models[h.target_region_id] = report.plaintext
        self.stats.accepted += 1
        self.stats.accepted_seqs.append(h.sequence_number)
        p.append_event(self.actor, "package.validate", "Accepted",
                       f"kind={h.payload_kind.name} seq={h.sequence_number} version={h.package_version}")
        return "Accepted"
