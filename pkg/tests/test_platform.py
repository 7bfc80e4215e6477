import json
import threading

import pytest

from aegissat import crypto
from aegissat.bitstream import CNN_USAGE, SHIFT_USAGE, BehaviorId, ResourceUsage
from aegissat.errors import (
    AlreadyProgrammed,
    IllegalTransition,
    NotSecureWorld,
    UnknownRegion,
    Unavailable,
    ZeroizedKeystore,
)
from aegissat.platform import (
    EVENT_FIELDS,
    TRUST_ANCHOR,
    AddressRange,
    Decision,
    EventLog,
    Perm,
    Platform,
    RegionState,
    SimClock,
    VfpgaRegion,
    World,
    WorldContext,
    check_disjoint,
    default_layout,
)

NORMAL = WorldContext(World.NORMAL, "AppX")


def activate(p, rid, owner="AppX"):
    usage = CNN_USAGE if rid == 1 else SHIFT_USAGE
    assert p.allocate_vfpga(usage, owner) == rid
    p.activate(rid, BehaviorId.CNN_V1, 1, b"image")


def test_fuses_program_once(keys):
    p = Platform(crypto.TEST)
    h = crypto.digest(keys.root_public.key_bytes)
    p.provision_fuses(h)
    with pytest.raises(AlreadyProgrammed):
        p.provision_fuses(h)
    assert p.fuses.public_key_hash == h
    assert [e.outcome for e in p.log] == ["ok", "AlreadyProgrammed"]


def test_trusted_keys_require_fuse_match(keys, rogue_keys):
    p = Platform(crypto.TEST)
    p.install_root_key(keys.root_public)
    assert p.trusted_keys() == {}
    p.provision_fuses(crypto.digest(keys.root_public.key_bytes))
    assert p.trusted_keys() == {keys.root_public.key_id: keys.root_public}
    p.install_root_key(rogue_keys.root_public)
    assert p.trusted_keys() == {}


def test_keystore_world_separation(platform, keys):
    with pytest.raises(NotSecureWorld):
        platform.keystore.device_key(NORMAL)
    assert platform.keystore.device_key(TRUST_ANCHOR) == keys.device
    with pytest.raises(NotSecureWorld):
        platform.tamper_zeroize(NORMAL)
    assert platform.keystore.holds_any_key()


def test_zeroize(platform, keys, rng):
    platform.keystore.put_session_key(TRUST_ANCHOR, 1, crypto.generate_symmetric_key(rng))
    platform.tamper_zeroize(TRUST_ANCHOR)
    assert not platform.keystore.holds_any_key()
    with pytest.raises(ZeroizedKeystore):
        platform.keystore.device_key(TRUST_ANCHOR)
    with pytest.raises(ZeroizedKeystore):
        platform.keystore.session_key(TRUST_ANCHOR, 1)
    # Fuses are one-time-programmable and survive.
    assert platform.fuses.programmed


def test_region_lifecycle(platform):
    assert platform.allocate_vfpga(CNN_USAGE, "AppX") == 1
    assert platform.region(1).state is RegionState.CONFIGURING
    with pytest.raises(IllegalTransition):
        platform.release_vfpga(1)
    platform.activate(1, BehaviorId.CNN_V1, 3, b"img")
    r = platform.region(1)
    assert r.state is RegionState.ACTIVE and r.config_crc == crypto.crc32(b"img")
    platform.quarantine_vfpga(1)
    with pytest.raises(IllegalTransition):
        platform.quarantine_vfpga(1)
    platform.release_vfpga(1)
    assert r.state is RegionState.EMPTY and r.config_image is None and r.owner is None
    with pytest.raises(UnknownRegion):
        platform.region(7)


def test_allocation(platform):
    assert platform.allocate_vfpga(SHIFT_USAGE, "B") == 2
    assert platform.allocate_vfpga(CNN_USAGE, "A") == 1
    with pytest.raises(Unavailable):
        platform.allocate_vfpga(CNN_USAGE, "C")
    with pytest.raises(Unavailable):
        platform.allocate_vfpga(ResourceUsage(clb_luts=10**6))


def test_owner_reuses_active_region(platform):
    activate(platform, 1)
    assert platform.allocate_vfpga(CNN_USAGE, "AppX") == 1
    assert platform.region(1).state is RegionState.CONFIGURING


@pytest.mark.parametrize("addr,length,op,expected", [
    (0xA000_0000, 4, "read", Decision.ALLOW),
    (0xA000_0000, 0x1_0000, "write", Decision.ALLOW),
    (0xA000_FFFC, 4, "write", Decision.ALLOW),
    (0xA000_FFFC, 8, "write", Decision.DENY),       # straddles the end
    (0x9FFF_FFFC, 8, "read", Decision.DENY),        # straddles the start
    (0xA000_0000, 0, "read", Decision.DENY),        # zero length
    (0xA010_0000, 4, "read", Decision.ALLOW),
    (0xA010_0000, 4, "write", Decision.DENY),       # read-only window
    (0xA001_0000, 4, "read", Decision.DENY),        # neighbour's range
    (2**64 - 4, 16, "read", Decision.DENY),         # wrap-around
])
def test_firewall_rules(platform, addr, length, op, expected):
    activate(platform, 1)
    assert platform.firewall_check(1, addr, length, op) is expected


def test_violations_quarantine(platform):
    activate(platform, 1)
    activate(platform, 2, owner="B")
    for _ in range(2):
        assert platform.firewall_check(1, 0xA001_0000, 4, "read") is Decision.DENY
    assert platform.region(1).state is RegionState.ACTIVE
    assert platform.interrupt_check(1, 123) is Decision.DENY
    assert platform.region(1).state is RegionState.QUARANTINED
    # Once quarantined, even in-range requests are refused.
    assert platform.firewall_check(1, 0xA000_0000, 4, "read") is Decision.DENY
    assert platform.interrupt_check(1, 121) is Decision.DENY
    assert platform.region(2).state is RegionState.ACTIVE
    denies = [e for e in platform.log if e.outcome == "deny"]
    assert len(denies) == 5
    assert sum(e.action == "region.quarantine" for e in platform.log) == 1


def test_interrupt_allowlist(platform):
    activate(platform, 1)
    assert platform.interrupt_check(1, 121) is Decision.ALLOW
    assert platform.interrupt_check(1, 122) is Decision.ALLOW
    assert platform.interrupt_check(1, 120) is Decision.DENY


def test_batch_matches_single(keys, rng):
    def fresh():
        p = Platform(crypto.TEST)
        activate(p, 1)
        activate(p, 2, owner="B")
        return p

    a, b = fresh(), fresh()
    rids = rng.integers(1, 3, size=300).tolist()
    addrs = rng.integers(0xA000_0000 - 64, 0xA010_2000, size=300).tolist()
    lens = rng.integers(0, 128, size=300).tolist()
    ops = ["read" if x else "write" for x in rng.integers(0, 2, size=300)]
    single = [a.firewall_check(r, ad, ln, op) is Decision.ALLOW for r, ad, ln, op in zip(rids, addrs, lens, ops)]
    batch = b.firewall_check_batch(rids, addrs, lens, ops).tolist()
    assert single == batch
    assert a.log.export_jsonl() == b.log.export_jsonl()


def test_layout_disjoint():
    check_disjoint(default_layout())
    r = default_layout()
    clash = VfpgaRegion(3, (AddressRange(0xA000_8000, 16, Perm.READ),), frozenset(), CNN_USAGE)
    with pytest.raises(ValueError):
        check_disjoint(r + [clash])
    with pytest.raises(ValueError):
        Platform(regions=r + [clash])


def test_event_log_format():
    log = EventLog()
    assert log.append(5, "a", "x", "ok", "d") == 1
    assert log.append(6, "b", "y", "fail") == 2
    lines = log.export_jsonl().splitlines()
    assert list(json.loads(lines[0])) == list(EVENT_FIELDS)
    assert EventLog.from_jsonl(log.export_jsonl()).snapshot() == log.snapshot()
    with pytest.raises(ValueError):
        EventLog.from_jsonl('{"seq": 1}')


def test_event_log_concurrent_appends():
    log = EventLog()

    def work():
        for _ in range(500):
            log.append(0, "t", "a", "ok")

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert [r.seq for r in log] == list(range(1, 4001))


def test_clock():
    c = SimClock()
    c.advance(1.5)
    c.advance_to(1.0)
    assert c.now_ms == 1.5
    with pytest.raises(ValueError):
        c.advance(-1)
