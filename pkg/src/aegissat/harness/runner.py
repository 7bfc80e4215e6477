"""Scenario execution: script actions, expectation predicates, result export."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import crypto
from ..bitstream import FeatureSummary, ResourceUsage
from ..boot import (
    UPDATE_WATCHDOG_MS,
    BootImageSlot,
    SlotId,
    Stage,
    install_firmware,
    run_boot,
    stage_payload,
    watchdog_tick,
)
from ..errors import AegisError, AlreadyProgrammed, IoFailure, MalformedScenario, NotSecureWorld, SlotNotWritable
from ..link import AdversaryConfig, MessageKind, NULL_ADVERSARY, configure_adversary, inject_seu, transmit
from ..package import NO_REGION, PackageMeta, PayloadKind, serialize_package
from ..platform import TRUST_ANCHOR, EVENT_FIELDS, EventLog, Perm, RegionState, World, WorldContext
from ..reconfig import golden_vectors, handle_accel_request, run_bist, scrub_regions
from .metrics import MetricsSummary, collect_metrics
from .scenario import Scenario, load_scenario
from .testbed import Testbed, derive_seed, forge_package, make_workload

log = logging.getLogger("aegissat")

EXIT_OK = 0
EXIT_EXPECTATION = 1
EXIT_MALFORMED = 2


def configure_logging() -> None:
    level = os.environ.get("AEGIS_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


@dataclass(frozen=True)
class ExpectationResult:
    index: int
    predicate: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ScenarioResult:
    scenario: Scenario
    testbed: Testbed
    metrics: MetricsSummary
    expectations: list[ExpectationResult] = field(default_factory=list)

    @property
    def platform(self):
        return self.testbed.platform

    @property
    def log(self) -> EventLog:
        return self.testbed.platform.log

    @property
    def trace(self):
        return self.testbed.trace

    @property
    def sessions(self):
        return self.testbed.sessions

    @property
    def counters(self) -> dict[str, int]:
        return self.testbed.counters

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.expectations)

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.passed else EXIT_EXPECTATION

    def summary(self) -> dict:
        p = self.platform
        return {
            "scenario": self.scenario.name,
            "seed": self.scenario.seed,
            "exit_code": self.exit_code,
            "platform_state": p.state.value,
            "boot_outcome": p.boot_outcome.value if p.boot_outcome else None,
            "fw_version": p.fw_version,
            "regions": {str(rid): r.state.value for rid, r in sorted(p.regions.items())},
            "sessions": [
                {"session_id": s.session_id, "state": s.describe(), "region": s.region_id, "steps": s.steps}
                for s in self.sessions
            ],
            "counters": dict(sorted(self.counters.items())),
            "expectations": [e.to_dict() for e in self.expectations],
        }


# --- actions ------------------------------------------------------------------------

def _window_closed(tb: Testbed, what: str) -> bool:
    if tb.platform.update_window_open:
        return False
    tb.platform.append_event("scheduler", "update.window", "Deferred", what)
    tb.bump("update.deferred")
    return True


def act_provision(tb: Testbed, args: dict) -> None:
    p, keys = tb.platform, tb.keys
    p.provision_fuses(crypto.digest(keys.root_public.key_bytes, tb.profile))
    p.install_root_key(keys.root_public)
    p.keystore.load_device_key(TRUST_ANCHOR, keys.device)
    if args.get("twice"):
        try:
            p.provision_fuses(crypto.digest(keys.root_public.key_bytes, tb.profile))
        except AlreadyProgrammed:
            tb.bump("errors.AlreadyProgrammed")


def _corrupt(tb: Testbed, spec: str) -> None:
    slot_name, stage_name, byte = spec.split(":")
    sid = SlotId.parse(slot_name)
    stage = next(st for st in Stage if st.label == stage_name)
    slot = tb.slots[sid]
    if slot.writable:
        slot.corrupt(stage, int(byte))
        return
    # Write protection stops software, not radiation or a failing flash cell.
    chain = [bytearray(b) for b in slot.stage_chain]
    chain[stage][int(byte) % len(chain[stage])] ^= 0x01
    tb.slots[sid] = BootImageSlot(sid, [bytes(b) for b in chain])


def act_boot(tb: Testbed, args: dict) -> None:
    tb.boot_slots()
    for spec in args.get("corrupt", []):
        _corrupt(tb, spec)
    report = run_boot(tb.platform, [tb.slots[sid] for sid in SlotId])
    tb.boot_reports.append(report)
    tb.bump(f"boot.{report.outcome.value}")


def act_install_firmware(tb: Testbed, args: dict) -> None:
    if _window_closed(tb, "install_firmware"):
        return
    tb.boot_slots()
    slot = tb.slots[SlotId.parse(args["slot"])]
    stages = [next(st for st in Stage if st.label == n) for n in args.get("stages", [st.label for st in Stage])]
    p = tb.platform
    for st in stages:
        tb.sync(tb.ground)
        body = tb.rng.bytes(2048)
        meta = PackageMeta(args["version"], PayloadKind.FIRMWARE_STAGE, tb.ground.next_seq(), p.clock.now_int(), tb.nonce())
        pkg = forge_package(stage_payload(st, body), meta, tb.keys.device, tb.keys.root_private, tb.profile)
        try:
            report = install_firmware(p, pkg, slot)
        except SlotNotWritable:
            tb.bump("errors.SlotNotWritable")
            return
        tb.bump("firmware.accepted" if report.accepted else "firmware.rejected")


def act_reconfig(tb: Testbed, args: dict) -> None:
    if _window_closed(tb, "reconfig"):
        return
    p = tb.platform
    app = tb.app(args.get("app", "AppX"))
    usage = ResourceUsage.from_dict(args["usage"]) if "usage" in args else None
    features = FeatureSummary(**args["trojan"]) if "trojan" in args else None
    zeroize_at = args.get("zeroize_before_step")
    tamper = args.get("tamper_in_transit", False)

    def before_step(k: int) -> None:
        if k == zeroize_at:
            p.tamper_zeroize(TRUST_ANCHOR)
        if k == 5 and tamper:
            configure_adversary(tb.interworld, AdversaryConfig(tamper_prob=1.0,
                                                              rng_seed=derive_seed(tb.seed, "interworld", len(tb.sessions))))

    for _ in range(args.get("trials", 1)):
        bs = make_workload(args["workload"], tb.rng, usage=usage, features=features)
        tb.sync(app, None)
        for rid in p.regions:
            tb.sync(app, rid)
        try:
            session = handle_accel_request(
                p, app, bs.encode(), tb.interworld,
                rng=tb.rng, version=args.get("version"),
                fault_at_step=args.get("fault_at_step"), before_step=before_step,
            )
        finally:
            configure_adversary(tb.interworld, NULL_ADVERSARY)
        tb.sessions.append(session)
        tb.bump(f"session.{session.state.value}")
        log.info("session %d: %s", session.session_id, session.describe())
        if session.abort_reason is None and args.get("bist", True):
            vectors = golden_vectors(bs, args.get("bist_vectors", 8), tb.rng)
            p.bist_vectors[session.region_id] = vectors
            run_bist(p, session.region_id, vectors)


_MUTATIONS = {
    "none", "BadMagic", "BadSignature", "AuthFailure", "DigestMismatch", "CrcMismatch", "RollbackVersion",
    "ReplayedSequence", "StaleTimestamp", "UnknownRegion", "ResourceOverBudget", "TrojanSuspect",
}


def _build_delivery(tb: Testbed, mutate: str, kind: str, region: int | None) -> bytes:
    p, keys, g = tb.platform, tb.keys, tb.ground
    bitstream = kind == "bitstream" or mutate in ("ResourceOverBudget", "TrojanSuspect")
    if bitstream:
        pk = PayloadKind.PARTIAL_BITSTREAM
        rid = 1 if region is None else region
        usage = p.region(rid).budget.scaled(2) if mutate == "ResourceOverBudget" else None
        features = FeatureSummary(ring_oscillator_like=1) if mutate == "TrojanSuspect" else None
        name = "shift" if p.region(rid).budget.carry8 else "cnn"
        payload = make_workload(name, tb.rng, usage=usage, features=features, body_len=4096).encode()
    else:
        pk = PayloadKind.AI_MODEL
        rid = NO_REGION if region is None else region
        payload = tb.rng.bytes(1024)
    if mutate == "UnknownRegion":
        rid = max(p.regions) + 1
    tb.sync(g)
    now = p.clock.now_int()
    stored = p.stored_version(pk, rid)
    meta = PackageMeta(
        package_version=stored if mutate == "RollbackVersion" else stored + 1,
        payload_kind=pk,
        sequence_number=p.last_sequence if mutate == "ReplayedSequence" else g.next_seq(),
        timestamp_ms=(
            (now - p.freshness_window_ms - 1 if now > p.freshness_window_ms else now + p.freshness_window_ms + 1)
            if mutate == "StaleTimestamp" else now
        ),
        nonce=tb.nonce(),
        target_region_id=rid,
    )
    key, signer, overrides = keys.device, keys.root_private, {}
    if mutate == "BadMagic":
        overrides["format_version"] = 2
    elif mutate == "BadSignature":
        signer = crypto.generate_keypair(crypto.TEST, derive_seed(tb.seed, "rogue"))[0] \
            if tb.profile.profile_id is crypto.ProfileId.TEST else crypto.generate_keypair(tb.profile)[0]
    elif mutate == "AuthFailure":
        key = crypto.generate_symmetric_key(tb.rng)
    elif mutate == "DigestMismatch":
        overrides["plaintext_digest"] = crypto.digest(payload + b"\x00", tb.profile)
    elif mutate == "CrcMismatch":
        overrides["plaintext_crc"] = crypto.crc32(payload) ^ 0x1
    return serialize_package(forge_package(payload, meta, key, signer, tb.profile, **overrides))


def _drain_uplink(tb: Testbed) -> list[tuple[object, str]]:
    """Deliver everything the adversary is still holding, in due order."""
    out = []
    lo, hi = tb.uplink.adversary.delay_range_ms
    for d in tb.uplink.poll(tb.platform.clock.now_ms + hi):
        tb.platform.clock.advance_to(max(tb.platform.clock.now_ms, d.due_ms))
        out.append((d, tb.receiver.handle(d)))
    return out


def act_deliver_package(tb: Testbed, args: dict) -> None:
    if _window_closed(tb, "deliver_package"):
        return
    mutate = args.get("mutate", "none")
    body = _build_delivery(tb, mutate, args.get("kind", "ai_model"), args.get("region"))
    transmit(tb.uplink, tb.uplink.make_message(MessageKind.PACKAGE_TRANSFER, body))
    for _, outcome in _drain_uplink(tb):
        tb.bump(f"deliver.{outcome}")


def act_inject_seu(tb: Testbed, args: dict) -> None:
    r = tb.platform.region(args["region"])
    bit = args["bit"] if "bit" in args else int(tb.rng.integers(0, len(r.config_image or b"\0") * 8))
    inject_seu(tb.platform, args["region"], bit)


def act_scrub(tb: Testbed, args: dict) -> None:
    scrub_regions(tb.platform, reload=args.get("reload", True))


def act_tamper(tb: Testbed, args: dict) -> None:
    world = World(args.get("world", "Secure"))
    try:
        tb.platform.tamper_zeroize(TRUST_ANCHOR if world is World.SECURE else WorldContext(world, "AppX"))
    except NotSecureWorld:
        tb.bump("errors.NotSecureWorld")


def act_advance_clock(tb: Testbed, args: dict) -> None:
    """Move simulated time forward, scrubbing at each interval boundary."""
    p = tb.platform
    target = p.clock.now_ms + float(args["ms"])
    step = tb.scenario.scrub_interval_ms
    if step:
        t = (math.floor(p.clock.now_ms / step) + 1) * step
        while t <= target:
            watchdog_tick(p, t)
            scrub_regions(p)
            t = (math.floor(p.clock.now_ms / step) + 1) * step
    watchdog_tick(p, max(target, p.clock.now_ms))


def act_arm_watchdog(tb: Testbed, args: dict) -> None:
    tb.platform.arm_watchdog(args.get("timeout_ms", UPDATE_WATCHDOG_MS), args.get("label", "update"))


def act_checkpoint(tb: Testbed, args: dict) -> None:
    tb.platform.checkpoint()


def act_watchdog_tick(tb: Testbed, args: dict) -> None:
    watchdog_tick(tb.platform, tb.platform.clock.now_ms)


def _oracle_contains(ranges, addr: int, length: int, op: Perm) -> bool:
    """Plain restatement of the firewall rule, kept apart from the platform code."""
    if length == 0:
        return False
    for ar in ranges:
        if (ar.perms & op) == op and ar.base <= addr and addr + length <= ar.base + ar.length:
            return True
    return False


def act_firewall_fuzz(tb: Testbed, args: dict) -> None:
    p = tb.platform
    rng = np.random.default_rng(derive_seed(tb.seed, "fuzz", args.get("seed", 0)))
    rids = sorted(p.regions)
    n = args.get("requests", 10_000)
    saved = p.violation_threshold
    if not args.get("quarantine", True):
        p.violation_threshold = math.inf

    req_rid, addrs, lens, ops = [], [], [], []
    for _ in range(n):
        rid = rids[int(rng.integers(len(rids)))]
        own = p.regions[rid].address_ranges
        others = [ar for q in rids if q != rid for ar in p.regions[q].address_ranges]
        cat = int(rng.integers(4))
        if cat == 0 or (cat == 1 and not others):
            ar = own[int(rng.integers(len(own)))]
            off = int(rng.integers(ar.length))
            addr, length = ar.base + off, int(rng.integers(1, ar.length - off + 1))
        elif cat == 1:
            ar = others[int(rng.integers(len(others)))]
            addr, length = ar.base + int(rng.integers(ar.length)), int(rng.integers(1, 257))
        elif cat == 2:
            ar = own[int(rng.integers(len(own)))]
            addr = ar.base + ar.length - int(rng.integers(1, 65))
            length = int(rng.integers(65, 4097))
        else:
            addr, length = int(rng.integers(0, 2**32)), int(rng.integers(0, 4097))
        req_rid.append(rid)
        addrs.append(addr)
        lens.append(length)
        ops.append("write" if rng.random() < 0.5 else "read")

    states_before = {rid: p.regions[rid].state for rid in rids}
    allowed = p.firewall_check_batch(req_rid, addrs, lens, ops)
    outside = sum(
        1 for k in range(n)
        if allowed[k] and not _oracle_contains(p.regions[req_rid[k]].address_ranges, addrs[k], lens[k],
                                               Perm.WRITE if ops[k] == "write" else Perm.READ)
    )
    tb.bump("fuzz.requests", n)
    tb.bump("fuzz.allows", int(allowed.sum()))
    tb.bump("fuzz.denies", int(n - allowed.sum()))
    tb.bump("fuzz.allows_outside", outside)

    irq_n = args.get("irq_requests", 1000)
    lines = sorted({i for rid in rids for i in p.regions[rid].irq_allowlist}) or [0]
    off_list = 0
    irq_allows = 0
    for _ in range(irq_n):
        rid = rids[int(rng.integers(len(rids)))]
        line = int(rng.integers(max(0, lines[0] - 8), lines[-1] + 9))
        if p.interrupt_check(rid, line).value == "allow":
            irq_allows += 1
            if line not in p.regions[rid].irq_allowlist:
                off_list += 1
    tb.bump("fuzz.irq_requests", irq_n)
    tb.bump("fuzz.irq_allows", irq_allows)
    tb.bump("fuzz.irq_allows_off_list", off_list)

    if not args.get("quarantine", True):
        p.violation_threshold = saved
        for rid in rids:
            if p.regions[rid].state is states_before[rid]:
                p.regions[rid].violations = 0


def act_firewall_probe(tb: Testbed, args: dict) -> None:
    for _ in range(args.get("repeat", 1)):
        d = tb.platform.firewall_check(args["region"], args["addr"], args.get("length", 4), args.get("op", "read"))
        tb.bump(f"probe.{d.value}")


def act_link_flood(tb: Testbed, args: dict) -> None:
    """Stream commands and AI-model packages over the adversarial uplink."""
    p, g, up = tb.platform, tb.ground, tb.uplink
    frames = args["frames"]
    frac = args.get("package_fraction", 0.5)
    body_len = args.get("body_len", 256)
    pick = np.random.default_rng(derive_seed(tb.seed, "flood"))
    expected: dict[int, bytes] = {}
    accepted_seqs: set[int] = set()
    version = p.stored_version(PayloadKind.AI_MODEL, NO_REGION)

    def deliver(batch):
        for d, outcome in batch:
            tb.bump("flood.deliveries")
            tb.bump(f"flood.{outcome.lower()}")
            if outcome != "Accepted":
                continue
            seq = d.message.msg_seq
            if seq in accepted_seqs:
                tb.bump("flood.accepted_duplicates")
            if d.frame != expected[seq]:
                tb.bump("flood.accepted_tampered")
            accepted_seqs.add(seq)

    for i in range(frames):
        if pick.random() < frac:
            tb.sync(g)
            version += 1
            meta = PackageMeta(version, PayloadKind.AI_MODEL, g.next_seq(), p.clock.now_int(), tb.nonce())
            pkg = forge_package(tb.rng.bytes(body_len), meta, tb.keys.device, tb.keys.root_private, tb.profile)
            msg = up.make_message(MessageKind.PACKAGE_TRANSFER, serialize_package(pkg))
            tb.bump("flood.packages_sent")
        else:
            body = json.dumps({"op": "telemetry_request", "i": i}, sort_keys=True).encode()
            msg = up.make_message(MessageKind.COMMAND, body)
            tb.bump("flood.commands_sent")
        expected[msg.msg_seq] = up.seal(msg)
        transmit(up, msg)
        p.clock.advance(1.0)
        deliver((d, tb.receiver.handle(d)) for d in up.poll())
    deliver(_drain_uplink(tb))


ACTIONS = {
    "provision": act_provision,
    "boot": act_boot,
    "install_firmware": act_install_firmware,
    "reconfig": act_reconfig,
    "deliver_package": act_deliver_package,
    "inject_seu": act_inject_seu,
    "scrub": act_scrub,
    "tamper": act_tamper,
    "advance_clock": act_advance_clock,
    "arm_watchdog": act_arm_watchdog,
    "checkpoint": act_checkpoint,
    "watchdog_tick": act_watchdog_tick,
    "firewall_fuzz": act_firewall_fuzz,
    "firewall_probe": act_firewall_probe,
    "link_flood": act_link_flood,
}


# --- expectations -----------------------------------------------------------------

def _cmp(value: float, spec: dict) -> tuple[bool, str]:
    ok = True
    parts = []
    for op, fn in (("eq", lambda a, b: a == b), ("ge", lambda a, b: a >= b), ("le", lambda a, b: a <= b)):
        if op in spec:
            ok &= fn(value, spec[op])
            parts.append(f"{op} {spec[op]}")
    return ok, f"value {value} ({', '.join(parts) or 'no bound'})"


def _in(value: float, bounds) -> bool:
    return bounds[0] <= value <= bounds[1]


def _expect(tb: Testbed, name: str, arg) -> tuple[bool, str]:
    p = tb.platform
    if name == "region_state":
        got = p.region(arg["region"]).state.value
        return got == arg["state"], f"region {arg['region']} is {got}"
    if name == "boot_outcome":
        got = p.boot_outcome.value if p.boot_outcome else None
        return got == arg, f"boot outcome {got}"
    if name == "platform_state":
        return p.state.value == arg, f"platform {p.state.value}"
    if name == "fw_version":
        return p.fw_version == arg, f"fw_version {p.fw_version}"
    if name == "keystore_zeroized":
        got = p.keystore.zeroized
        return got == arg, f"zeroized={got}"
    if name == "session":
        if not tb.sessions:
            return False, "no sessions ran"
        s = tb.sessions[arg.get("index", -1)]
        ok = True
        if "state" in arg:
            ok &= s.state.value == arg["state"]
        if "reason_contains" in arg:
            ok &= arg["reason_contains"] in (s.abort_reason or "")
        if "steps" in arg:
            ok &= s.steps == list(arg["steps"])
        return ok, f"session {s.session_id}: {s.describe()} steps={s.steps}"
    if name == "all_sessions":
        bad = [s.describe() for s in tb.sessions if s.state.value != arg]
        return bool(tb.sessions) and not bad, f"{len(tb.sessions)} sessions, off-state: {bad[:3]}"
    if name == "event_count":
        n = sum(
            1 for r in p.log
            if r.action == arg["action"]
            and ("outcome" not in arg or r.outcome == arg["outcome"])
            and ("detail_contains" not in arg or arg["detail_contains"] in r.detail)
            and ("detail_matches" not in arg or re.search(arg["detail_matches"], r.detail))
        )
        return _cmp(n, arg)
    if name == "event_sequence":
        want = [tuple(x.split(":", 1)) for x in arg]
        recs = p.log.snapshot()

        def match(r, w):
            return r.action == w[0] and (len(w) == 1 or r.outcome == w[1])

        for i in range(len(recs) - len(want) + 1):
            if all(match(recs[i + j], w) for j, w in enumerate(want)):
                return True, f"found at seq {recs[i].seq}"
        return False, "sequence not found in the event log"
    if name == "counter":
        return _cmp(tb.counters.get(arg["name"], 0), arg)
    if name == "metrics":
        st = collect_metrics(p.log).regions.get(arg["region"])
        if st is None:
            return False, f"no programming durations for region {arg['region']}"
        ok = True
        if "n" in arg:
            ok &= st.n == arg["n"]
        if "mean_ms" in arg:
            ok &= _in(st.mean_ms, arg["mean_ms"])
        if "std_ms" in arg:
            ok &= _in(st.sample_std_ms, arg["std_ms"])
        return ok, f"n={st.n} mean={st.mean_ms:.4f} std={st.sample_std_ms:.4f}"
    raise MalformedScenario(f"unknown expectation {name!r}")


# --- driver ---------------------------------------------------------------------------

def run_scenario(scenario, seed: int | None = None) -> ScenarioResult:
    """Execute a scenario (object or path) deterministically under its seed."""
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    if seed is not None:
        scenario = scenario.with_seed(seed)
    tb = Testbed(scenario)
    results: list[ExpectationResult] = []
    for i, (name, args) in enumerate(scenario.script):
        if name == "expect":
            for pred, arg in args.items():
                ok, detail = _expect(tb, pred, arg)
                results.append(ExpectationResult(i, pred, ok, detail))
                log.info("expect[%d] %s: %s (%s)", i, pred, "pass" if ok else "FAIL", detail)
            continue
        try:
            ACTIONS[name](tb, args)
        except AegisError as exc:
            # An unplanned error ends the script; it counts as a failed expectation.
            results.append(ExpectationResult(i, name, False, f"{type(exc).__name__}: {exc}"))
            log.error("action %d (%s) raised %s: %s", i, name, type(exc).__name__, exc)
            break
    return ScenarioResult(scenario, tb, collect_metrics(tb.platform.log), results)


def _jsonl_header(kind: str, fields) -> str:
    return json.dumps({"format": f"aegissat-{kind}", "version": 1, "fields": list(fields)}, separators=(",", ":")) + "\n"


TRACE_FIELDS = ("channel", "original_seq", "action", "arg")


def export_results(result: ScenarioResult, directory) -> dict[str, Path]:
    """Write events.jsonl, trace.jsonl, metrics.json and summary.json.

    Output bytes depend only on the scenario and seed.
    """
    d = Path(directory)
    files = {
        "events": (d / "events.jsonl", _jsonl_header("events", EVENT_FIELDS) + result.log.export_jsonl()),
        "trace": (d / "trace.jsonl", _jsonl_header("trace", TRACE_FIELDS) + result.trace.export_jsonl()),
        "metrics": (d / "metrics.json", json.dumps(result.metrics.to_dict(), indent=2, sort_keys=True) + "\n"),
        "summary": (d / "summary.json", json.dumps(result.summary(), indent=2, sort_keys=True) + "\n"),
    }
    try:
        d.mkdir(parents=True, exist_ok=True)
        for path, text in files.values():
            path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoFailure(f"cannot write results to {d}: {exc}") from None
    return {k: v[0] for k, v in files.items()}


def read_events(path) -> EventLog:
    """Load an exported events.jsonl (the header line is skipped)."""
    lines = Path(path).read_text().splitlines()
    body = [ln for ln in lines if ln and not ln.startswith('{"format"')]
    return EventLog.from_jsonl("\n".join(body))
