"""Scenario files: YAML documents checked against a shipped JSON schema."""

from __future__ import annotations

import copy
import functools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from ..bitstream import ResourceUsage
from ..errors import MalformedScenario
from ..link import AdversaryConfig
from ..platform import AddressRange, Perm, VfpgaRegion, check_disjoint, default_layout
from ..reconfig import CALIBRATION, RegionTiming

DEFAULT_SEED = 0
DEFAULT_SCRUB_INTERVAL_MS = 1000

_PERMS = {"r": Perm.READ, "w": Perm.WRITE, "rw": Perm.READ | Perm.WRITE}


@functools.lru_cache(maxsize=1)
def scenario_schema() -> dict:
    text = resources.files(__package__).joinpath("scenario.schema.json").read_text()
    return json.loads(text)


@dataclass
class Scenario:
    name: str
    seed: int
    profile: str
    layout: list[VfpgaRegion]
    timing: dict[int, RegionTiming]
    timing_seeds: dict[int, int]
    adversary: AdversaryConfig
    script: list[tuple[str, dict]]
    keys: Path | None = None
    boot_slots: dict[str, int] = field(default_factory=dict)
    freshness_window_ms: int | None = None
    violation_threshold: int | None = None
    scrub_interval_ms: int = DEFAULT_SCRUB_INTERVAL_MS
    update_window: bool = True
    description: str = ""
    source: dict = field(default_factory=dict, repr=False)

    @property
    def region_ids(self) -> set[int]:
        return {r.region_id for r in self.layout}

    def with_seed(self, seed: int) -> "Scenario":
        out = copy.copy(self)
        out.seed = int(seed)
        return out


def _layout(doc) -> list[VfpgaRegion]:
    if doc in (None, "default"):
        return default_layout()
    regions = []
    for r in doc:
        ranges = tuple(AddressRange(a["base"], a["length"], _PERMS[a["perms"]]) for a in r["ranges"])
        regions.append(VfpgaRegion(r["id"], ranges, frozenset(r["irqs"]), ResourceUsage.from_dict(r["budget"])))
    ids = [r.region_id for r in regions]
    if len(set(ids)) != len(ids):
        raise MalformedScenario("duplicate region ids in layout")
    try:
        check_disjoint(regions)
    except ValueError as exc:
        raise MalformedScenario(str(exc)) from None
    return regions


# Action arguments that must name a declared region.
_REGION_ARGS = {
    "inject_seu": ("region",),
    "firewall_probe": ("region",),
    "deliver_package": ("region",),
}


def _check_refs(script: list[tuple[str, dict]], region_ids: set[int]) -> None:
    for i, (name, args) in enumerate(script):
        for key in _REGION_ARGS.get(name, ()):
            if key in args and args[key] not in region_ids and not (
                name == "deliver_package" and args.get("mutate") == "UnknownRegion"
            ):
                raise MalformedScenario(f"script[{i}] {name}: region {args[key]} is not declared")
        if name == "expect":
            for pred in ("region_state", "metrics"):
                if pred in args and args[pred]["region"] not in region_ids:
                    raise MalformedScenario(f"script[{i}] expect.{pred}: region {args[pred]['region']} is not declared")


def parse_scenario(doc, base_dir: Path | None = None) -> Scenario:
    """Validate a decoded scenario document and build a :class:`Scenario`."""
    if not isinstance(doc, dict):
        raise MalformedScenario("a scenario is a mapping at top level")
    try:
        jsonschema.validate(doc, scenario_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise MalformedScenario(f"{where}: {exc.message}") from None

    layout = _layout(doc.get("layout"))
    region_ids = {r.region_id for r in layout}
    timing = {rid: t for rid, t in CALIBRATION.items() if rid in region_ids}
    timing_seeds = {}
    for t in doc.get("timing", []):
        if t["region"] not in region_ids:
            raise MalformedScenario(f"timing: region {t['region']} is not declared")
        timing[t["region"]] = RegionTiming(t["base_overhead_ms"], t["throughput_bytes_per_ms"], t["jitter_sigma_ms"])
        if "seed" in t:
            timing_seeds[t["region"]] = t["seed"]

    script = [(name, dict(args or {})) for step in doc["script"] for name, args in step.items()]
    _check_refs(script, region_ids)

    keys = doc.get("keys")
    if keys is not None:
        keys = Path(keys)
        if not keys.is_absolute() and base_dir is not None:
            keys = base_dir / keys
    try:
        adversary = AdversaryConfig.from_dict(doc.get("adversary"))
    except ValueError as exc:
        raise MalformedScenario(f"adversary: {exc}") from None

    return Scenario(
        name=doc["name"],
        seed=doc.get("seed", DEFAULT_SEED),
        profile=doc.get("profile", "test"),
        layout=layout,
        timing=timing,
        timing_seeds=timing_seeds,
        adversary=adversary,
        script=script,
        keys=keys,
        boot_slots=dict(doc.get("boot_slots", {})),
        freshness_window_ms=doc.get("freshness_window_ms"),
        violation_threshold=doc.get("violation_threshold"),
        scrub_interval_ms=doc.get("scrub_interval_ms", DEFAULT_SCRUB_INTERVAL_MS),
        update_window=doc.get("update_window", True),
        description=doc.get("description", ""),
        source=doc,
    )


def load_scenario(path) -> Scenario:
    """Read a YAML scenario; any structural problem raises MalformedScenario."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise MalformedScenario(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise MalformedScenario(f"{path}: not valid YAML ({exc})") from None
    return parse_scenario(doc, path.parent)


def shipped_scenarios() -> dict[str, Path]:
    """Name -> path of every scenario bundled with the package."""
    root = resources.files("aegissat").joinpath("scenarios")
    return {Path(str(p)).stem: Path(str(p)) for p in root.iterdir() if str(p).endswith(".yaml")}


def shipped_scenario(name: str) -> Path:
    try:
        return shipped_scenarios()[name]
    except KeyError:
        raise MalformedScenario(f"no shipped scenario named {name!r}") from None
