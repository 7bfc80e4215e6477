"""World construction for scenario runs: keys, platform, links, clients, workloads."""

from __future__ import annotations

import copy
import dataclasses
import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import behavioral, crypto
from ..bitstream import CNN_USAGE, SHIFT_USAGE, BehaviorId, FeatureSummary, ResourceUsage, SimBitstream
from ..boot import BootImageSlot, SlotId, make_slot
from ..crypto import CryptoProfile, KeyKind, KeyMaterial
from ..errors import IoFailure, MalformedScenario
from ..link import Channel, DeliveryTrace, PackageReceiver
from ..package import PackageMeta, UpdatePackage, build_package
from ..platform import Platform
from ..reconfig import CALIBRATION_BODY_BYTES, AppClient, IcapTimingModel
from .scenario import Scenario

KEY_FILES = {
    "root_private": "root.key",
    "root_public": "root.pub",
    "app_private": "app.key",
    "app_public": "app.pub",
    "device": "device.key",
    "pipe": "pipe.key",
}
_KINDS = {
    "root_private": KeyKind.ASYM_PRIVATE,
    "root_public": KeyKind.ASYM_PUBLIC,
    "app_private": KeyKind.ASYM_PRIVATE,
    "app_public": KeyKind.ASYM_PUBLIC,
    "device": KeyKind.SYMMETRIC,
    "pipe": KeyKind.SYMMETRIC,
}


def derive_seed(master: int, *tags) -> int:
    """Stable 32-bit sub-seed for a named component of a run."""
    words = [int(master) & 0xFFFFFFFF]
    for t in tags:
        words.append(zlib.crc32(t.encode()) if isinstance(t, str) else int(t) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass(frozen=True)
class KeySet:
    profile: CryptoProfile
    root_private: KeyMaterial
    root_public: KeyMaterial
    app_private: KeyMaterial
    app_public: KeyMaterial
    device: KeyMaterial
    pipe: KeyMaterial


def generate_keyset(profile: CryptoProfile, seed: int | None = None) -> KeySet:
    """Test-profile sets are a pure function of ``seed``; Reference sets use the OS RNG."""
    deterministic = profile.profile_id is crypto.ProfileId.TEST
    s = 0 if seed is None else seed
    if deterministic:
        root = crypto.generate_keypair(profile, derive_seed(s, "root"))
        app = crypto.generate_keypair(profile, derive_seed(s, "app"))
        rng = np.random.default_rng(derive_seed(s, "symmetric"))
    else:
        root = crypto.generate_keypair(profile)
        app = crypto.generate_keypair(profile)
        rng = None
    return KeySet(profile, root[0], root[1], app[0], app[1],
                  crypto.generate_symmetric_key(rng), crypto.generate_symmetric_key(rng))


def write_keyset(keys: KeySet, directory) -> list[Path]:
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
        written = []
        for attr, fname in KEY_FILES.items():
            (d / fname).write_bytes(getattr(keys, attr).key_bytes)
            written.append(d / fname)
        manifest = {
            "profile": keys.profile.profile_id.value,
            "key_ids": {attr: getattr(keys, attr).key_id.hex() for attr in KEY_FILES},
        }
        (d / "keys.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        written.append(d / "keys.json")
    except OSError as exc:
        raise IoFailure(f"cannot write keys to {d}: {exc}") from None
    return written


def read_keyset(directory) -> KeySet:
    d = Path(directory)
    try:
        manifest = json.loads((d / "keys.json").read_text())
        material = {attr: crypto.make_key(_KINDS[attr], (d / f).read_bytes()) for attr, f in KEY_FILES.items()}
    except (OSError, ValueError) as exc:
        raise MalformedScenario(f"unreadable key directory {d}: {exc}") from None
    return KeySet(crypto.profile_by_name(manifest["profile"]), **material)


# --- workloads --------------------------------------------------------------------

WORKLOADS = {"cnn": (BehaviorId.CNN_V1, CNN_USAGE, 1), "shift": (BehaviorId.SHIFT_V1, SHIFT_USAGE, 2)}


def make_workload(
    name: str,
    rng: np.random.Generator,
    *,
    usage: ResourceUsage | None = None,
    features: FeatureSummary | None = None,
    body_len: int | None = None,
) -> SimBitstream:
    """A demonstration accelerator with random parameters and body.

    The body length defaults to the calibration size of the region the
    workload is built for, so timing follows the calibrated model.
    """
    behavior, default_usage, region = WORKLOADS[name]
    if behavior is BehaviorId.CNN_V1:
        kernel = rng.integers(-128, 128, size=(3, 3))
        params = behavioral.encode_cnn_params(kernel, int(rng.integers(0, 8)))
    else:
        params = behavioral.encode_shift_params(behavioral.Direction(int(rng.integers(0, 2))), int(rng.integers(0, 32)))
    n = CALIBRATION_BODY_BYTES[region] if body_len is None else body_len
    return SimBitstream(behavior, params, usage or default_usage, features or FeatureSummary(), rng.bytes(n))


def forge_package(
    payload: bytes,
    meta: PackageMeta,
    key: KeyMaterial,
    signer: KeyMaterial,
    profile: CryptoProfile,
    **header_overrides,
) -> UpdatePackage:
    """Build a package whose header fields are overridden before sealing.

    The result is encrypted and signed consistently with the altered header,
    so only the checks tied to the overridden field fail.
    """
    honest = build_package(payload, meta, key, signer, profile)
    if not header_overrides:
        return honest
    header = dataclasses.replace(honest.header, **header_overrides)
    aad = header.pack()
    ct = crypto.aead_encrypt(key, header.nonce, payload, aad)
    return UpdatePackage(header, ct, crypto.sign(aad + ct, signer, profile))


# --- the assembled world ----------------------------------------------------------

class Testbed:
    """Everything a scenario script acts on."""

    def __init__(self, scenario: Scenario):
        s = scenario
        self.scenario = s
        self.seed = s.seed
        self.profile = crypto.profile_by_name(s.profile)
        self.keys = read_keyset(s.keys) if s.keys is not None else generate_keyset(self.profile, s.seed)
        if self.keys.profile != self.profile:
            raise MalformedScenario(f"key directory holds {self.keys.profile.profile_id.value} keys, "
                                    f"scenario wants {self.profile.profile_id.value}")
        kwargs = {}
        if s.freshness_window_ms is not None:
            kwargs["freshness_window_ms"] = s.freshness_window_ms
        if s.violation_threshold is not None:
            kwargs["violation_threshold"] = s.violation_threshold
        self.platform = p = Platform(self.profile, copy.deepcopy(s.layout), **kwargs)
        p.update_window_open = s.update_window
        p.timing = IcapTimingModel(
            s.timing,
            derive_seed(s.seed, "timing"),
            {rid: derive_seed(s.seed, "timing", sd) for rid, sd in s.timing_seeds.items()},
        )
        self.trace = DeliveryTrace()
        adversary = dataclasses.replace(s.adversary, rng_seed=derive_seed(s.seed, "adversary", s.adversary.rng_seed))
        self.uplink = Channel("uplink", p.clock, self.keys.pipe, adversary, self.trace, channel_id=1)
        self.interworld = Channel("interworld", p.clock, self.keys.pipe, trace=self.trace, channel_id=2)
        self.receiver = PackageReceiver(p)
        self.rng = np.random.default_rng(derive_seed(s.seed, "world"))
        self.ground = AppClient("Ground", (self.keys.app_private, self.keys.app_public),
                                self.keys.root_private, self.profile, self.rng)
        self.apps: dict[str, AppClient] = {}
        self.slots: dict[SlotId, BootImageSlot] | None = None
        self.sessions = []
        self.boot_reports = []
        self.counters: dict[str, int] = {}

    def bump(self, name: str, by: int = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + by

    def app(self, principal: str) -> AppClient:
        if principal not in self.apps:
            self.apps[principal] = AppClient(principal, (self.keys.app_private, self.keys.app_public),
                                             self.keys.root_private, self.profile, self.rng)
        return self.apps[principal]

    def sync(self, client: AppClient, region_id: int | None = None, kind: int = 0) -> None:
        """Bring a client's counters up to the device's accepted state (telemetry)."""
        p = self.platform
        client.seq = max(client.seq, p.last_sequence)
        if region_id is not None:
            client.versions[region_id] = max(client.versions.get(region_id, 0), p.stored_version(kind, region_id))

    def boot_slots(self) -> list[BootImageSlot]:
        if self.slots is None:
            versions = self.scenario.boot_slots
            self.slots = {}
            for sid in SlotId:
                self.slots[sid] = make_slot(
                    sid, versions.get(sid.label, 1), self.keys.device, self.keys.root_private, self.profile,
                    seq_base=1 + 3 * int(sid),
                )
        return [self.slots[sid] for sid in SlotId]

    def nonce(self) -> bytes:
        return self.rng.bytes(crypto.NONCE_LEN)


__all__ = [
    "KeySet",
    "Testbed",
    "derive_seed",
    "forge_package",
    "generate_keyset",
    "make_workload",
    "read_keyset",
    "write_keyset",
]
