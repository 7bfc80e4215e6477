import numpy as np
import pytest

from aegissat.bitstream import CNN_USAGE, BehaviorId
from aegissat.errors import AuthFailure, ChannelClosed, RegionNotActive
from aegissat.link import (
    AdversaryConfig,
    Channel,
    DeliveryTrace,
    FrameAction,
    MessageKind,
    PackageReceiver,
    ProtocolMessage,
    ReliableStatus,
    configure_adversary,
    inject_seu,
    transmit,
    transmit_reliable,
)
from aegissat.package import serialize_package
from aegissat.platform import SimClock

from .helpers import pkg


def chan(keys, clock=None, **adv):
    return Channel("up", clock or SimClock(), keys.pipe, AdversaryConfig(**adv), DeliveryTrace(), channel_id=1)


def test_seal_open_roundtrip(keys):
    c = chan(keys)
    m = c.make_message(MessageKind.COMMAND, b"hello")
    assert c.open_frame(c.seal(m)) == m
    frame = bytearray(c.seal(m))
    frame[3] ^= 1  # header bytes are authenticated too
    with pytest.raises(AuthFailure):
        c.open_frame(bytes(frame))


@pytest.mark.parametrize("bad", [dict(drop_prob=1.5), dict(tamper_prob=-0.1), dict(delay_range_ms=(5, 2))])
def test_adversary_validation(bad):
    with pytest.raises(ValueError):
        AdversaryConfig(**bad)


def test_adversary_dict_roundtrip():
    a = AdversaryConfig(0.1, 0.2, 0.3, (1, 9), 0.05, 4)
    assert AdversaryConfig.from_dict(a.to_dict()) == a


def test_drop_all(keys):
    c = chan(keys, drop_prob=1.0)
    for _ in range(20):
        transmit(c, c.make_message(MessageKind.COMMAND))
    assert c.poll(1e9) == []
    assert c.trace.counts()["Dropped"] == 20
    assert len(c.captured) == 20


def test_duplicates_rejected_by_receiver(keys, platform):
    c = chan(keys, platform.clock, duplicate_prob=1.0)
    rx = PackageReceiver(platform)
    for _ in range(10):
        transmit(c, c.make_message(MessageKind.COMMAND, b"x"))
    outcomes = [rx.handle(d) for d in c.poll()]
    assert outcomes.count("Accepted") == 10 and outcomes.count("Rejected") == 10
    assert rx.stats.rejected_codes == {"ReplayedSequence": 10}


def test_tamper_and_bitflip_fail_authentication(keys, platform):
    for cfg in (dict(tamper_prob=1.0), dict(seu_bitflip_prob_per_frame=1.0)):
        c = chan(keys, platform.clock, **cfg)
        rx = PackageReceiver(platform)
        for _ in range(50):
            transmit(c, c.make_message(MessageKind.COMMAND, b"payload"))
        assert [rx.handle(d) for d in c.poll()] == ["Rejected"] * 50
        assert rx.stats.rejected_codes == {"AuthFailure": 50}


def test_delay_and_reordering(keys):
    clock = SimClock()
    c = chan(keys, clock, delay_range_ms=(0, 50), rng_seed=3)
    for _ in range(100):
        transmit(c, c.make_message(MessageKind.COMMAND))
    got = c.poll(50)
    assert len(got) == 100
    dues = [d.due_ms for d in got]
    assert dues == sorted(dues) and 0 <= min(dues) and max(dues) <= 50
    seqs = [d.message.msg_seq for d in got]
    assert seqs != sorted(seqs)


def test_same_seed_same_trace(keys):
    def run():
        c = chan(keys, drop_prob=0.3, duplicate_prob=0.3, tamper_prob=0.3, delay_range_ms=(0, 9), rng_seed=11)
        for _ in range(200):
            transmit(c, c.make_message(MessageKind.COMMAND, b"z"))
        return c.trace.export_jsonl()

    assert run() == run()


def test_sequence_and_closed_channel(keys):
    c = chan(keys)
    transmit(c, ProtocolMessage(5, 0, MessageKind.COMMAND))
    with pytest.raises(ValueError):
        transmit(c, ProtocolMessage(5, 0, MessageKind.COMMAND))
    c.close()
    with pytest.raises(ChannelClosed):
        transmit(c, ProtocolMessage(6, 0, MessageKind.COMMAND))


def test_reliable_transfer(keys):
    clock = SimClock()
    ok = transmit_reliable(chan(keys, clock), ProtocolMessage(1, 0, MessageKind.COMMAND), 3, 100)
    assert ok.status is ReliableStatus.ACKED and ok.attempts == 1
    lost = chan(keys, clock, drop_prob=1.0)
    r = transmit_reliable(lost, lost.make_message(MessageKind.COMMAND), 3, 100)
    assert r.status is ReliableStatus.GAVE_UP and r.attempts == 4
    assert len(set(r.sent_seqs)) == 4  # every retry carries a fresh sequence number


def test_reliable_with_lossy_return_path(keys):
    clock = SimClock()
    up = chan(keys, clock, drop_prob=0.5, rng_seed=1)
    down = Channel("down", clock, keys.pipe, AdversaryConfig(drop_prob=0.5, rng_seed=2), channel_id=2)
    seen = []
    r = transmit_reliable(up, up.make_message(MessageKind.COMMAND, b"c"), 20, 10, reply_channel=down,
                          on_receive=seen.append)
    assert r.status is ReliableStatus.ACKED
    assert len(seen) >= 1


def test_configure_adversary_applies_to_later_frames(keys):
    c = chan(keys)
    transmit(c, c.make_message(MessageKind.COMMAND))
    configure_adversary(c, AdversaryConfig(drop_prob=1.0))
    transmit(c, c.make_message(MessageKind.COMMAND))
    assert len(c.poll()) == 1


def test_receiver_package_flow(keys, platform):
    rx = PackageReceiver(platform)
    c = chan(keys, platform.clock)
    body = serialize_package(pkg(keys, b"weights", seq=1, ts=0))
    transmit(c, c.make_message(MessageKind.PACKAGE_TRANSFER, body))
    transmit(c, c.make_message(MessageKind.PACKAGE_TRANSFER, body))  # same package, new frame
    assert [rx.handle(d) for d in c.poll()] == ["Accepted", "Rejected"]
    assert platform.ai_models[0xFF] == b"weights"
    assert rx.stats.rejected_codes == {"RollbackVersion": 1, "ReplayedSequence": 1}


def test_inject_seu(platform):
    assert platform.allocate_vfpga(CNN_USAGE, "a") == 1
    platform.activate(1, BehaviorId.CNN_V1, 1, b"\x00" * 16)
    inject_seu(platform, 1, 9)
    assert bytes(platform.region(1).config_image) == b"\x00\x02" + b"\x00" * 14
    with pytest.raises(RegionNotActive):
        inject_seu(platform, 2, 0)
    assert np.count_nonzero(np.unpackbits(np.frombuffer(bytes(platform.region(1).config_image), np.uint8))) == 1
