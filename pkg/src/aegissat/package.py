"""AEGISPKG update-package container: build, serialize, parse, validate.

Wire layout (little-endian throughout)::

    header (100 bytes)
      magic            8s   b"AEGISPKG"
      format_version   u16  1
      package_version  u32  anti-rollback counter
      payload_kind     u8   0 bitstream, 1 AI model, 2 firmware stage
      target_region_id u8   0xFF = not region-targeted
      sequence_number  u64
      timestamp_ms     u64
      payload_len      u32  plaintext length
      nonce            12s
      plaintext_digest 48s  SHA3-384 of the plaintext
      plaintext_crc    u32  CRC-32 of the plaintext
    ciphertext         payload_len + 16 bytes (AES-256-GCM, AAD = header)
    signer_key_id      8s
    sig_len            u16
    sig_bytes          sig_len bytes, signature over header || ciphertext
"""

from __future__ import annotations

import enum
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field

from . import crypto
from .bitstream import ResourceUsage, ScanVerdict, SimBitstream, trojan_scan
from .crypto import CryptoProfile, KeyMaterial, Signature
from .errors import AuthFailure, MalformedPackage, PayloadTooLarge

MAGIC = b"AEGISPKG"
FORMAT_VERSION = 1
MAX_PAYLOAD = 16 * 1024 * 1024
NO_REGION = 0xFF
DEFAULT_FRESHNESS_MS = 24 * 3600 * 1000

_HEADER = struct.Struct("<8sHIBBQQI12s48sI")
HEADER_LEN = _HEADER.size
_SIG_PREFIX = struct.Struct("<8sH")


class PayloadKind(enum.IntEnum):
    PARTIAL_BITSTREAM = 0
    AI_MODEL = 1
    FIRMWARE_STAGE = 2


class FailedCheck(str, enum.Enum):
    BAD_MAGIC = "BadMagic"
    BAD_SIGNATURE = "BadSignature"
    AUTH_FAILURE = "AuthFailure"
    DIGEST_MISMATCH = "DigestMismatch"
    CRC_MISMATCH = "CrcMismatch"
    ROLLBACK_VERSION = "RollbackVersion"
    REPLAYED_SEQUENCE = "ReplayedSequence"
    STALE_TIMESTAMP = "StaleTimestamp"
    UNKNOWN_REGION = "UnknownRegion"
    RESOURCE_OVER_BUDGET = "ResourceOverBudget"
    TROJAN_SUSPECT = "TrojanSuspect"


class Verdict(str, enum.Enum):
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"


@dataclass(frozen=True)
class PackageMeta:
    """Caller-chosen header fields; the rest is derived from the payload."""

    package_version: int
    payload_kind: PayloadKind
    sequence_number: int
    timestamp_ms: int
    nonce: bytes
    target_region_id: int = NO_REGION


@dataclass(frozen=True)
class PackageHeader:
    magic: bytes
    format_version: int
    package_version: int
    payload_kind: PayloadKind
    target_region_id: int
    sequence_number: int
    timestamp_ms: int
    payload_len: int
    nonce: bytes
    plaintext_digest: bytes
    plaintext_crc: int

    def pack(self) -> bytes:
        return _HEADER.pack(
            self.magic,
            self.format_version,
            self.package_version,
            int(self.payload_kind),
            self.target_region_id,
            self.sequence_number,
            self.timestamp_ms,
            self.payload_len,
            self.nonce,
            self.plaintext_digest,
            self.plaintext_crc,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "PackageHeader":
        if len(data) < HEADER_LEN:
            raise MalformedPackage(f"header truncated ({len(data)} < {HEADER_LEN} bytes)")
        f = _HEADER.unpack_from(data, 0)
        if f[0] != MAGIC:
            raise MalformedPackage(f"bad magic {f[0]!r}")
        try:
            kind = PayloadKind(f[3])
        except ValueError:
            raise MalformedPackage(f"unknown payload kind {f[3]}") from None
        if f[7] > MAX_PAYLOAD:
            raise MalformedPackage("payload_len exceeds 16 MiB")
        return cls(f[0], f[1], f[2], kind, f[4], f[5], f[6], f[7], f[8], f[9], f[10])


@dataclass(frozen=True)
class UpdatePackage:
    header: PackageHeader
    ciphertext: bytes
    signature: Signature

    @property
    def signed_bytes(self) -> bytes:
        return self.header.pack() + self.ciphertext


@dataclass(frozen=True)
class ValidationReport:
    verdict: Verdict
    failed_checks: tuple[FailedCheck, ...]
    checked_at_ms: int
    plaintext: bytes | None = field(default=None, repr=False, compare=False)

    @property
    def accepted(self) -> bool:
        return self.verdict is Verdict.ACCEPTED

    def codes(self) -> list[str]:
        return [c.value for c in self.failed_checks]


def build_package(
    payload: bytes,
    meta: PackageMeta,
    key: KeyMaterial,
    signer: KeyMaterial,
    profile: CryptoProfile = crypto.REFERENCE,
) -> UpdatePackage:
    payload = bytes(payload)
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"{len(payload)} bytes exceeds {MAX_PAYLOAD}")
    header = PackageHeader(
        MAGIC,
        FORMAT_VERSION,
        meta.package_version,
        PayloadKind(meta.payload_kind),
        meta.target_region_id,
        meta.sequence_number,
        meta.timestamp_ms,
        len(payload),
        bytes(meta.nonce),
        crypto.digest(payload, profile),
        crypto.crc32(payload),
    )
    aad = header.pack()
    ciphertext = crypto.aead_encrypt(key, header.nonce, payload, aad)
    return UpdatePackage(header, ciphertext, crypto.sign(aad + ciphertext, signer, profile))


def serialize_package(pkg: UpdatePackage) -> bytes:
    sig = pkg.signature
    return b"".join(
        (
            pkg.header.pack(),
            pkg.ciphertext,
            _SIG_PREFIX.pack(sig.signer_key_id, len(sig.sig_bytes)),
            sig.sig_bytes,
        )
    )


def parse_package(data: bytes) -> UpdatePackage:
    """Structural decode only; no cryptographic checks."""
    data = bytes(data)
    header = PackageHeader.unpack(data)
    off = HEADER_LEN
    ct_len = header.payload_len + crypto.TAG_LEN
    ciphertext = data[off : off + ct_len]
    if len(ciphertext) != ct_len:
        raise MalformedPackage("ciphertext truncated")
    off += ct_len
    if len(data) < off + _SIG_PREFIX.size:
        raise MalformedPackage("signature block truncated")
    key_id, sig_len = _SIG_PREFIX.unpack_from(data, off)
    off += _SIG_PREFIX.size
    sig_bytes = data[off:]
    if len(sig_bytes) != sig_len:
        raise MalformedPackage(f"signature length {len(sig_bytes)} != declared {sig_len}")
    return UpdatePackage(header, ciphertext, Signature(key_id, sig_bytes))


def validate_package(
    pkg: UpdatePackage,
    keystore: Mapping[bytes, KeyMaterial],
    stored_version: int,
    last_sequence: int,
    now_ms: int,
    freshness_window_ms: int,
    decrypt_key: KeyMaterial | None,
    regions: Mapping[int, ResourceUsage],
    profile: CryptoProfile = crypto.REFERENCE,
) -> ValidationReport:
    """Run every check in fixed order and report all failures.

    ``keystore`` maps key ids to trusted public keys; ``regions`` maps
    region ids to their resource budgets. A missing ``decrypt_key``
    (zeroized store) fails the decryption step. The plaintext is attached
    only to an Accepted report.
    """
    h = pkg.header
    failed: list[FailedCheck] = []

    if h.magic != MAGIC or h.format_version != FORMAT_VERSION:
        failed.append(FailedCheck.BAD_MAGIC)

    signer = keystore.get(pkg.signature.signer_key_id)
    if signer is None or not crypto.verify(pkg.signed_bytes, pkg.signature, signer, profile):
        failed.append(FailedCheck.BAD_SIGNATURE)

    plaintext = None
    if decrypt_key is None:
        failed.append(FailedCheck.AUTH_FAILURE)
    else:
        try:
            plaintext = crypto.aead_decrypt(decrypt_key, h.nonce, pkg.ciphertext, h.pack())
        except (AuthFailure, ValueError):
            failed.append(FailedCheck.AUTH_FAILURE)

    if plaintext is not None:
        if len(plaintext) != h.payload_len or crypto.digest(plaintext, profile) != h.plaintext_digest:
            failed.append(FailedCheck.DIGEST_MISMATCH)
        if crypto.crc32(plaintext) != h.plaintext_crc:
            failed.append(FailedCheck.CRC_MISMATCH)

    if h.package_version <= stored_version:
        failed.append(FailedCheck.ROLLBACK_VERSION)
    if h.sequence_number <= last_sequence:
        failed.append(FailedCheck.REPLAYED_SEQUENCE)
    if abs(now_ms - h.timestamp_ms) > freshness_window_ms:
        failed.append(FailedCheck.STALE_TIMESTAMP)

    is_bitstream = h.payload_kind is PayloadKind.PARTIAL_BITSTREAM
    region_known = h.target_region_id in regions
    if (is_bitstream or h.target_region_id != NO_REGION) and not region_known:
        failed.append(FailedCheck.UNKNOWN_REGION)

    if is_bitstream and plaintext is not None:
        try:
            bitstream = SimBitstream.decode(plaintext)
        except ValueError:
            # An unparseable bitstream cannot be scanned; treat it as hostile.
            failed.append(FailedCheck.TROJAN_SUSPECT)
        else:
            if region_known and not bitstream.resource_usage.fits(regions[h.target_region_id]):
                failed.append(FailedCheck.RESOURCE_OVER_BUDGET)
            if trojan_scan(bitstream).verdict is ScanVerdict.SUSPECT:
                failed.append(FailedCheck.TROJAN_SUSPECT)

    if failed:
        return ValidationReport(Verdict.REJECTED, tuple(failed), now_ms)
    return ValidationReport(Verdict.ACCEPTED, (), now_ms, plaintext)
