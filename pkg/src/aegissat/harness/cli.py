"""`aegis` command line."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .. import crypto
from ..boot import SlotId, Stage, make_slot, run_boot
from ..errors import AegisError, MalformedScenario
from ..package import NO_REGION, PackageMeta, PayloadKind, build_package, parse_package, serialize_package, validate_package
from ..platform import TRUST_ANCHOR, Platform
from .runner import EXIT_MALFORMED, configure_logging, export_results, run_scenario
from .scenario import load_scenario, shipped_scenarios
from .testbed import generate_keyset, read_keyset, write_keyset

_KINDS = {"bitstream": PayloadKind.PARTIAL_BITSTREAM, "ai_model": PayloadKind.AI_MODEL, "firmware": PayloadKind.FIRMWARE_STAGE}


def _resolve(scenario: str) -> Path:
    p = Path(scenario)
    if p.exists():
        return p
    shipped = shipped_scenarios()
    if scenario in shipped:
        return shipped[scenario]
    raise MalformedScenario(f"no such scenario file or shipped scenario: {scenario}")


def _run(scenario: str, seed: int | None, out: str | None) -> int:
    try:
        result = run_scenario(load_scenario(_resolve(scenario)), seed=seed)
    except MalformedScenario as exc:
        click.echo(f"malformed scenario: {exc}", err=True)
        return EXIT_MALFORMED
    for e in result.expectations:
        click.echo(f"{'PASS' if e.passed else 'FAIL'}  [{e.index}] {e.predicate}: {e.detail}")
    for rid, st in sorted(result.metrics.regions.items()):
        click.echo(f"region {rid}: n={st.n} mean_ms={st.mean_ms:.3f} sample_std_ms={st.sample_std_ms:.3f}")
    if out:
        for name, path in export_results(result, out).items():
            click.echo(f"wrote {name}: {path}")
    click.echo(f"{result.scenario.name}: {'ok' if result.passed else 'expectation failure'}")
    return result.exit_code


@click.group()
def main() -> None:
    """Secure reconfiguration simulator."""
    configure_logging()


@main.command("run")
@click.argument("scenario")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Export directory.")
def run_cmd(scenario: str, seed: int | None, out: str | None) -> None:
    """Run SCENARIO (a YAML file or a shipped scenario name)."""
    sys.exit(_run(scenario, seed, out))


@main.group()
def keys() -> None:
    """Key material."""


@keys.command("gen")
@click.option("--profile", type=click.Choice(["reference", "test"]), default="test", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Test profile only.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def keys_gen(profile: str, seed: int, out: str) -> None:
    """Generate root, application, device and pipe keys into a directory."""
    ks = generate_keyset(crypto.profile_by_name(profile), seed)
    for path in write_keyset(ks, out):
        click.echo(str(path))


@main.group()
def pack() -> None:
    """Update packages."""


@pack.command("build")
@click.option("--payload", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--kind", type=click.Choice(sorted(_KINDS)), required=True)
@click.option("--version", "version", type=int, required=True)
@click.option("--region", type=int, default=NO_REGION, show_default=True)
@click.option("--seq", type=int, required=True)
@click.option("--timestamp", type=int, default=0, show_default=True)
@click.option("--key-dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def pack_build(payload, kind, version, region, seq, timestamp, key_dir, out) -> None:
    """Encrypt with the device key and sign with the root key."""
    ks = read_keyset(key_dir)
    data = Path(payload).read_bytes()
    nonce = crypto.digest(data + seq.to_bytes(8, "little"))[: crypto.NONCE_LEN]
    meta = PackageMeta(version, _KINDS[kind], seq, timestamp, nonce, region)
    pkg = build_package(data, meta, ks.device, ks.root_private, ks.profile)
    Path(out).write_bytes(serialize_package(pkg))
    click.echo(f"{out}: {len(data)} byte payload, seq {seq}, version {version}")


@pack.command("verify")
@click.option("--payload", "package", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Serialized package to check.")
@click.option("--key-dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--version", "stored_version", type=int, default=0, show_default=True, help="Stored version.")
@click.option("--seq", "last_seq", type=int, default=0, show_default=True, help="Last accepted sequence.")
@click.option("--now", "now_ms", type=int, default=None, help="Device time (defaults to the package timestamp).")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the plaintext here on acceptance.")
def pack_verify(package, key_dir, stored_version, last_seq, now_ms, out) -> None:
    """Run every validation check against the default layout."""
    ks = read_keyset(key_dir)
    try:
        pkg = parse_package(Path(package).read_bytes())
    except AegisError as exc:
        click.echo(json.dumps({"verdict": "Rejected", "failed_checks": ["Malformed"], "error": str(exc)}))
        sys.exit(1)
    platform = Platform(ks.profile)
    report = validate_package(
        pkg, {ks.root_public.key_id: ks.root_public}, stored_version, last_seq,
        pkg.header.timestamp_ms if now_ms is None else now_ms, platform.freshness_window_ms,
        ks.device, platform.region_budgets(), ks.profile,
    )
    click.echo(json.dumps({"verdict": report.verdict.value, "failed_checks": report.codes()}))
    if report.accepted and out:
        Path(out).write_bytes(report.plaintext)
    sys.exit(0 if report.accepted else 1)


@main.group()
def boot() -> None:
    """Secure boot experiments."""


@boot.command("run")
@click.option("--slots", type=click.Path(exists=True, file_okay=False), required=True,
              help="Key directory (from `aegis keys gen`); slot images are built from it.")
@click.option("--corrupt", multiple=True, help="slot:stage:byte, e.g. Primary:OS:120 (repeatable).")
@click.option("--versions", default="1,1,1", show_default=True, help="Primary,Alternate,Golden versions.")
def boot_run(slots, corrupt, versions) -> None:
    """Boot from freshly built slots after scripted corruption."""
    try:
        ks = read_keyset(slots)
    except MalformedScenario as exc:
        raise click.BadParameter(str(exc), param_hint="--slots") from None
    vers = [int(v) for v in versions.split(",")]
    platform = Platform(ks.profile)
    platform.provision_fuses(crypto.digest(ks.root_public.key_bytes, ks.profile))
    platform.install_root_key(ks.root_public)
    platform.keystore.load_device_key(TRUST_ANCHOR, ks.device)
    images = {sid: make_slot(sid, vers[int(sid)], ks.device, ks.root_private, ks.profile, seq_base=1 + 3 * int(sid))
              for sid in SlotId}
    for spec in corrupt:
        try:
            s, st, b = spec.split(":")
            sid, stage = SlotId.parse(s), next(x for x in Stage if x.label.lower() == st.lower())
        except (ValueError, KeyError, StopIteration):
            raise click.BadParameter(f"expected slot:stage:byte, got {spec!r}", param_hint="--corrupt") from None
        chain = [bytearray(x) for x in images[sid].stage_chain]
        chain[stage][int(b) % len(chain[stage])] ^= 0x01
        images[sid] = type(images[sid])(sid, [bytes(x) for x in chain])
    report = run_boot(platform, [images[s] for s in SlotId])
    click.echo(json.dumps(report.to_dict(), indent=2))
    sys.exit(1 if report.outcome.value == "Halted" else 0)


@main.group()
def reconfig() -> None:
    """Partial reconfiguration."""


@reconfig.command("run")
@click.option("--scenario", required=True, help="Scenario file or shipped scenario name.")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
def reconfig_run(scenario: str, seed: int | None, out: str | None) -> None:
    """Run a reconfiguration scenario and print its sessions."""
    try:
        result = run_scenario(load_scenario(_resolve(scenario)), seed=seed)
    except MalformedScenario as exc:
        click.echo(f"malformed scenario: {exc}", err=True)
        sys.exit(EXIT_MALFORMED)
    for s in result.sessions:
        dur = f"{s.duration_ms:.3f} ms" if s.duration_ms is not None else "-"
        click.echo(f"session {s.session_id:3d} region={s.region_id} {s.describe():<28} steps={s.steps} program={dur}")
    for rid, st in sorted(result.metrics.regions.items()):
        click.echo(f"region {rid}: n={st.n} mean_ms={st.mean_ms:.3f} sample_std_ms={st.sample_std_ms:.3f}")
    if out:
        export_results(result, out)
    sys.exit(result.exit_code)


if __name__ == "__main__":  # pragma: no cover
    main()
