"""End-to-end acceptance checks, one per numbered criterion.

Each check records a PASS/FAIL line; the lines are printed in the terminal
summary (see conftest.py) and also when this file is run as a script.
"""

import math
import time

import numpy as np
import pytest

from aegissat import crypto
from aegissat.behavioral import CnnParams, Direction, ShiftParams, cnn_forward, shift_exec
from aegissat.boot import BootImageSlot, BootOutcome, SlotId, Stage, make_slot, run_boot
from aegissat.errors import AegisError
from aegissat.harness import export_results, parse_scenario, run_scenario, shipped_scenario, shipped_scenarios
from aegissat.package import (
    NO_REGION,
    PackageMeta,
    PayloadKind,
    build_package,
    parse_package,
    serialize_package,
)
from aegissat.platform import TRUST_ANCHOR, Perm, Platform, PlatformState, RegionState
from aegissat.reconfig import STEP_ACTIONS

from .helpers import pkg, validate
from .test_behavioral import brute_cnn, brute_shift

RESULTS: dict[int, list[tuple[bool, str]]] = {}

# Pinned targets and tolerances.
T2 = {1: (495.21, 8.64), 2: (528.21, 0.27)}
MEAN_REL_TOL = 0.01
STD_RANGE = (0.5, 2.0)
RUNTIME_LIMIT_S = 5.0


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS.setdefault(n, []).append((bool(ok), detail))
    assert ok, f"criterion {n}: {detail}"


def report_lines() -> list[str]:
    lines = []
    for n in range(1, 13):
        parts = RESULTS.get(n)
        if not parts:
            lines.append(f"FAIL criterion {n}: not run")
            continue
        ok = all(p for p, _ in parts)
        lines.append(f"{'PASS' if ok else 'FAIL'} criterion {n}: " + "; ".join(d for _, d in parts))
    return lines


def fresh_platform(keys):
    p = Platform(crypto.TEST)
    p.provision_fuses(crypto.digest(keys.root_public.key_bytes))
    p.install_root_key(keys.root_public)
    p.keystore.load_device_key(TRUST_ANCHOR, keys.device)
    return p


# --- 1 -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def table2_runs():
    out = {}
    for rid in (1, 2):
        t0 = time.perf_counter()
        res = run_scenario(shipped_scenario(f"table2_vfpga{rid}"))
        out[rid] = (res, time.perf_counter() - t0)
    return out


@pytest.mark.parametrize("rid", [1, 2])
def test_criterion_01_statistics(table2_runs, rid):
    res, wall = table2_runs[rid]
    st = res.metrics.regions[rid]
    mean, std = T2[rid]
    ok = (st.n == 25 and abs(st.mean_ms - mean) <= MEAN_REL_TOL * mean
          and STD_RANGE[0] * std <= st.sample_std_ms <= STD_RANGE[1] * std and wall < RUNTIME_LIMIT_S)
    record(1, ok, f"vFPGA{rid} n={st.n} mean={st.mean_ms:.3f} ms (target {mean}±1%) "
                  f"std={st.sample_std_ms:.3f} ms (target [{std * 0.5:.3f}, {std * 2:.3f}]) wall={wall:.2f} s")


@pytest.mark.parametrize("rid", [1, 2])
def test_criterion_01_simulated_runtime(table2_runs, rid):
    # 25 programs at the required mean already exceed the limit; see the ledger.
    res, _ = table2_runs[rid]
    sim_s = res.platform.clock.now_ms / 1000
    record(1, sim_s < RUNTIME_LIMIT_S, f"vFPGA{rid} simulated runtime {sim_s:.2f} s (limit {RUNTIME_LIMIT_S} s)")


# --- 2 -------------------------------------------------------------------------

def test_criterion_02_nine_step_trace():
    res = run_scenario(shipped_scenario("happy_path"))
    s = res.sessions[0]
    per_step = [e.action for e in res.log if e.action in STEP_ACTIONS.values()]
    first = per_step[:9]
    ok = (s.steps == list(range(1, 10)) and first == [STEP_ACTIONS[k] for k in range(1, 10)]
          and len(per_step) == 9 * len(res.sessions))
    record(2, ok, f"session steps {s.steps}, {len(first)} step records in order")


# --- 3 / 4 ---------------------------------------------------------------------

def _link_rejections(res):
    return [e for e in res.log if e.action == "link.frame" and e.outcome == "Rejected"]


def test_criterion_03_replay():
    res = run_scenario(shipped_scenario("replay_attack"))
    rej = _link_rejections(res)
    dup = res.trace.counts()["Duplicated"]
    c = res.counters
    ok = (dup >= 1000 and c.get("flood.accepted_duplicates", 0) == 0 and len(rej) == dup
          and all(e.detail.endswith("failed=ReplayedSequence") for e in rej))
    record(3, ok, f"{dup} duplicated frames, {c.get('flood.accepted_duplicates', 0)} accepted, "
                  f"{len(rej)} ReplayedSequence rejections")


def test_criterion_04_tamper():
    res = run_scenario(shipped_scenario("tamper_attack"))
    rej = _link_rejections(res)
    tam = sum(1 for r in res.trace.records if r.channel == "uplink" and r.action.value == "Tampered")
    c = res.counters
    ok = (tam >= 1000 and c.get("flood.accepted_tampered", 0) == 0 and c.get("flood.accepted", 0) == 0
          and len(rej) == tam and all(e.detail.endswith(("failed=AuthFailure", "failed=DigestMismatch")) for e in rej)
          and res.sessions[-1].abort_reason == "AuthFailure")
    record(4, ok, f"{tam} tampered frames, {c.get('flood.accepted_tampered', 0)} accepted, {len(rej)} "
                  f"AuthFailure/DigestMismatch rejections, in-transit reconfig {res.sessions[-1].describe()}")


# --- 5 -------------------------------------------------------------------------

def test_criterion_05_anti_rollback(keys, platform):
    pkgs = {v: pkg(keys, b"weights", version=v, seq=1) for v in range(101)}
    bad_reject = bad_accept = 0
    for vs in range(101):
        for vn, p in pkgs.items():
            r = validate(p, keys, platform, stored=vs, last_seq=0)
            if vn <= vs:
                bad_reject += r.codes() != ["RollbackVersion"]
            else:
                bad_accept += not r.accepted
    record(5, bad_reject == bad_accept == 0,
           f"101x101 pairs: {bad_reject} rollback pairs mis-handled, {bad_accept} newer versions refused")


# --- 6 -------------------------------------------------------------------------

def _corrupt(slot, stage, byte, bit):
    chain = [bytearray(b) for b in slot.stage_chain]
    chain[stage][byte % len(chain[stage])] ^= 1 << bit
    return BootImageSlot(slot.slot_id, [bytes(b) for b in chain])


def test_criterion_06_boot_totality(keys):
    rng = np.random.default_rng(606)
    clean = [make_slot(s, 1, keys.device, keys.root_private, crypto.TEST, seq_base=1 + 3 * s) for s in SlotId]
    expect = [BootOutcome.BOOTED_PRIMARY, BootOutcome.BOOTED_ALTERNATE, BootOutcome.BOOTED_GOLDEN]
    halted = wrong = golden_cases = golden_halts = 0
    for _ in range(500):
        slots = list(clean)
        broken = []
        for sid in (SlotId.PRIMARY, SlotId.ALTERNATE):
            hit = [st for st in Stage if rng.random() < 0.5]
            for st in hit:
                for _ in range(int(rng.integers(1, 4))):
                    slots[sid] = _corrupt(slots[sid], st, int(rng.integers(1 << 16)), int(rng.integers(8)))
            broken.append(bool(hit))
        out = run_boot(fresh_platform(keys), slots).outcome
        halted += out is BootOutcome.HALTED
        wrong += out is not expect[broken.index(False) if False in broken else 2]
        if all(broken):
            golden_cases += 1
            slots[SlotId.GOLDEN] = _corrupt(slots[SlotId.GOLDEN], Stage(int(rng.integers(3))),
                                            int(rng.integers(1 << 16)), int(rng.integers(8)))
            golden_halts += run_boot(fresh_platform(keys), slots).outcome is BootOutcome.HALTED
    ok = halted == wrong == 0 and golden_cases > 0 and golden_halts == golden_cases
    record(6, ok, f"500 patterns: {halted} Halted, {wrong} unexpected slots; "
                  f"Golden also corrupted: {golden_halts}/{golden_cases} Halted")


# --- 7 -------------------------------------------------------------------------

def test_criterion_07_watchdog():
    res = run_scenario(shipped_scenario("watchdog_revert"))
    n = sum(1 for e in res.log if e.outcome == "RecoveryTriggered")
    ok = res.platform.state is PlatformState.SAFE_MODE and res.platform.booted_slot == SlotId.GOLDEN and n == 1
    record(7, ok, f"platform {res.platform.state.value} on {SlotId(res.platform.booted_slot).label}, {n} RecoveryTriggered")


# --- 8 -------------------------------------------------------------------------

def _contains(ranges, addr, length, perm):
    if length <= 0:
        return False
    return any(r.base <= addr and addr + length <= r.base + r.length and perm in r.perms for r in ranges)


def test_criterion_08_isolation():
    doc = {"name": "iso", "seed": 808, "script": [
        {"provision": {}}, {"boot": {}},
        {"reconfig": {"workload": "cnn", "app": "A"}}, {"reconfig": {"workload": "shift", "app": "B"}}]}
    p = run_scenario(parse_scenario(doc)).platform
    rng = np.random.default_rng(808)
    rids = sorted(p.regions)
    allows_outside = irq_off = 0
    for _ in range(10_000):
        rid = rids[int(rng.integers(2))]
        if p.regions[rid].state is not RegionState.ACTIVE:
            rid = rids[1 - rids.index(rid)]
        target = p.regions[rids[int(rng.integers(2))]].address_ranges[0]
        addr = target.base + int(rng.integers(-64, target.length + 64))
        length = int(rng.integers(0, 512))
        op = "write" if rng.random() < 0.5 else "read"
        d = p.firewall_check(rid, addr, length, op)
        if d.value == "allow" and not _contains(p.regions[rid].address_ranges, addr, length,
                                               Perm.WRITE if op == "write" else Perm.READ):
            allows_outside += 1
        line = int(rng.integers(0, 64))
        if p.interrupt_check(rid, line).value == "allow" and line not in p.regions[rid].irq_allowlist:
            irq_off += 1
    fuzz_q = [r for r in rids if p.regions[r].state is RegionState.QUARANTINED]

    res = run_scenario(shipped_scenario("tenant_isolation"))
    q = res.platform.regions[1].state
    ok = allows_outside == irq_off == 0 and bool(fuzz_q) and q is RegionState.QUARANTINED \
        and res.counters["fuzz.allows_outside"] == 0 and res.counters["fuzz.irq_allows_off_list"] == 0
    record(8, ok, f"10000 requests: {allows_outside} allows outside, {irq_off} IRQ allows off-list, "
                  f"violators quarantined {fuzz_q}; scripted 3 violations leave region 1 {q.value}")


# --- 9 -------------------------------------------------------------------------

def test_criterion_09_behavioral():
    rng = np.random.default_rng(909)
    cnn_bad = shift_bad = 0
    for _ in range(1000):
        k, x, s = rng.integers(-128, 128, (3, 3)), rng.integers(-128, 128, (6, 6)), int(rng.integers(32))
        cnn_bad += cnn_forward(CnnParams(k, s, x)).tolist() != brute_cnn(k, s, x)
        v, d, a = int(rng.integers(2 ** 32)), Direction(int(rng.integers(2))), int(rng.integers(32))
        shift_bad += shift_exec(ShiftParams(v, d, a)) != brute_shift(v, d, a)
    record(9, cnn_bad == shift_bad == 0, f"1000 cases each: {cnn_bad} CNN and {shift_bad} shift mismatches")


# --- 10 ------------------------------------------------------------------------

def test_criterion_10_seu_pipeline():
    res = run_scenario(shipped_scenario("seu_scrub"))
    want = [("seu.inject", "ok"), ("scrub.check", "CrcMismatch"), ("region.quarantine", "ok"),
            ("region.release", "ok"), ("region.reload", "ok"), ("bist.run", "pass")]
    pairs = [(e.action, e.outcome) for e in res.log]
    i = pairs.index(want[0])
    got = pairs[i:i + len(want)]
    ok = got == want and res.platform.regions[1].state is RegionState.ACTIVE and res.passed
    record(10, ok, " -> ".join(f"{a}:{o}" for a, o in got))


# --- 11 ------------------------------------------------------------------------

def test_criterion_11_format(keys, platform):
    rng = np.random.default_rng(1111)
    mismatches = 0
    for _ in range(1000):
        meta = PackageMeta(int(rng.integers(2 ** 32)), PayloadKind(int(rng.integers(3))), int(rng.integers(2 ** 63)),
                           int(rng.integers(2 ** 63)), rng.bytes(12), int(rng.integers(256)))
        p = build_package(rng.bytes(int(rng.integers(0, 4096))), meta, keys.device, keys.root_private, crypto.TEST)
        raw = serialize_package(p)
        back = parse_package(raw)
        mismatches += back != p or serialize_package(back) != raw

    good = pkg(keys, rng.bytes(1500), version=2, seq=3)
    assert validate(good, keys, platform, stored=1, last_seq=2).accepted
    raw = serialize_package(good)
    positions = rng.choice(len(raw) * 8, size=500, replace=False)
    accepted = 0
    for bit in positions:
        b = bytearray(raw)
        b[bit // 8] ^= 1 << (bit % 8)
        try:
            accepted += validate(parse_package(bytes(b)), keys, platform, stored=1, last_seq=2).accepted
        except AegisError:
            pass
    record(11, mismatches == accepted == 0,
           f"1000 round-trips, {mismatches} mismatches; 500 single-bit flips, {accepted} accepted")


# --- 12 ------------------------------------------------------------------------

def test_criterion_12_determinism(tmp_path):
    diffs = []
    names = sorted(shipped_scenarios())
    for name in names:
        outs = []
        for k in range(2):
            d = tmp_path / name / str(k)
            export_results(run_scenario(shipped_scenario(name)), d)
            outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
        if outs[0] != outs[1] or len(outs[0]) != 4:
            diffs.append(name)
    record(12, not diffs, f"{len(names)} shipped scenarios run twice, differing: {diffs or 'none'}")


if __name__ == "__main__":  # pragma: no cover
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
