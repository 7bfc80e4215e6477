"""Digests, checksums, signatures, AEAD and session-key encapsulation.

Two profiles share one interface:

* ``REFERENCE``: RSA-4096 / PSS over SHA3-384, AES-256-GCM, RSA-OAEP key
  encapsulation. Signatures and encapsulations are randomized.
* ``TEST``: RSA-1024 / PKCS#1 v1.5 over SHA3-384 with seed-derived keys
  and a deterministic encapsulation padding. Fast and reproducible,
  **not secure**; meant for simulation sweeps only.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import os
import random
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from sympy import nextprime

from . import _kernels
from .errors import AuthFailure, DecapsulationFailure, WrongKeyKind

DIGEST_LEN = 48
KEY_ID_LEN = 8
SYM_KEY_LEN = 32
NONCE_LEN = 12
TAG_LEN = 16
RSA_E = 65537


class ProfileId(enum.Enum):
    REFERENCE = "Reference"
    TEST = "Test"


@dataclass(frozen=True)
class CryptoProfile:
    profile_id: ProfileId
    sig_scheme_name: str
    digest_name: str
    aead_name: str
    rsa_bits: int

    @property
    def sig_len(self) -> int:
        return self.rsa_bits // 8


REFERENCE = CryptoProfile(
    ProfileId.REFERENCE,
    sig_scheme_name="RSA-4096 (PSS) over SHA3-384",
    digest_name="SHA3-384",
    aead_name="AES-256-GCM (12-byte nonce, 16-byte tag)",
    rsa_bits=4096,
)
TEST = CryptoProfile(
    ProfileId.TEST,
    sig_scheme_name="RSA-1024 (PKCS1v15) over SHA3-384 [TEST ONLY, NOT SECURE]",
    digest_name="SHA3-384",
    aead_name="AES-256-GCM (12-byte nonce, 16-byte tag)",
    rsa_bits=1024,
)


def profile_by_name(name: str) -> CryptoProfile:
    key = name.strip().lower()
    if key == "reference":
        return REFERENCE
    if key == "test":
        return TEST
    raise ValueError(f"unknown crypto profile {name!r}")


class KeyKind(enum.Enum):
    ASYM_PUBLIC = "AsymPublic"
    ASYM_PRIVATE = "AsymPrivate"
    SYMMETRIC = "Symmetric"


@dataclass(frozen=True)
class KeyMaterial:
    kind: KeyKind
    key_bytes: bytes = field(repr=False)
    key_id: bytes

    def __post_init__(self):
        if self.kind is KeyKind.SYMMETRIC and len(self.key_bytes) != SYM_KEY_LEN:
            raise ValueError(f"symmetric keys are {SYM_KEY_LEN} bytes, got {len(self.key_bytes)}")
        if len(self.key_id) != KEY_ID_LEN:
            raise ValueError("key_id must be 8 bytes")


@dataclass(frozen=True)
class Signature:
    signer_key_id: bytes
    sig_bytes: bytes


def digest(data: bytes, profile: CryptoProfile = REFERENCE) -> bytes:
    """SHA3-384 of ``data`` (both profiles use the same digest)."""
    return hashlib.sha3_384(bytes(data)).digest()


def crc32(data: bytes) -> int:
    """CRC-32 (reflected 0x04C11DB7, init and xorout 0xFFFFFFFF)."""
    return _kernels.crc32(data)


def crc32_bytes(data: bytes) -> bytes:
    return crc32(data).to_bytes(4, "little")


def make_key(kind: KeyKind, key_bytes: bytes) -> KeyMaterial:
    key_bytes = bytes(key_bytes)
    return KeyMaterial(kind, key_bytes, digest(key_bytes)[:KEY_ID_LEN])


def _rand_bytes(rng, n: int) -> bytes:
    if rng is None:
        return os.urandom(n)
    if hasattr(rng, "bytes"):  # numpy.random.Generator
        return rng.bytes(n)
    return rng.randbytes(n)


def generate_symmetric_key(rng=None) -> KeyMaterial:
    return make_key(KeyKind.SYMMETRIC, _rand_bytes(rng, SYM_KEY_LEN))


def _test_rsa_private(seed: int) -> rsa.RSAPrivateKey:
    rnd = random.Random(seed)
    half = TEST.rsa_bits // 2
    while True:
        p = nextprime(rnd.getrandbits(half) | (3 << (half - 2)))
        q = nextprime(rnd.getrandbits(half) | (3 << (half - 2)))
        phi = (p - 1) * (q - 1)
        if p != q and phi % RSA_E != 0:
            break
    d = pow(RSA_E, -1, phi)
    numbers = rsa.RSAPrivateNumbers(
        p=p,
        q=q,
        d=d,
        dmp1=rsa.rsa_crt_dmp1(d, p),
        dmq1=rsa.rsa_crt_dmq1(d, q),
        iqmp=rsa.rsa_crt_iqmp(p, q),
        public_numbers=rsa.RSAPublicNumbers(RSA_E, p * q),
    )
    return numbers.private_key()


def _private_der(key: rsa.RSAPrivateKey) -> bytes:
    return key.private_bytes(
        serialization.Encoding.DER,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )


def _public_der(key: rsa.RSAPublicKey) -> bytes:
    return key.public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )


def generate_keypair(profile: CryptoProfile = TEST, seed: int | None = None):
    """Return ``(private, public)`` KeyMaterial.

    Test-profile keys are a pure function of ``seed``; Reference keys come
    from the OS RNG and reject a seed.
    """
    if profile.profile_id is ProfileId.TEST:
        priv = _test_rsa_private(0 if seed is None else seed)
    else:
        if seed is not None:
            raise ValueError("reference-profile keys cannot be derived from a seed")
        priv = rsa.generate_private_key(public_exponent=RSA_E, key_size=profile.rsa_bits)
    return (
        make_key(KeyKind.ASYM_PRIVATE, _private_der(priv)),
        make_key(KeyKind.ASYM_PUBLIC, _public_der(priv.public_key())),
    )


@functools.lru_cache(maxsize=64)
def _load_private(der: bytes) -> rsa.RSAPrivateKey:
    return serialization.load_der_private_key(der, password=None)


@functools.lru_cache(maxsize=64)
def _load_public(der: bytes) -> rsa.RSAPublicKey:
    return serialization.load_der_public_key(der)


def public_key_of(private: KeyMaterial) -> KeyMaterial:
    _require(private, KeyKind.ASYM_PRIVATE)
    return make_key(KeyKind.ASYM_PUBLIC, _public_der(_load_private(private.key_bytes).public_key()))


def _require(key: KeyMaterial, kind: KeyKind) -> None:
    if key.kind is not kind:
        raise WrongKeyKind(f"expected {kind.value} key, got {key.kind.value}")


def _pss() -> padding.PSS:
    return padding.PSS(mgf=padding.MGF1(hashes.SHA3_384()), salt_length=padding.PSS.DIGEST_LENGTH)


def sign(data: bytes, key: KeyMaterial, profile: CryptoProfile = REFERENCE) -> Signature:
    _require(key, KeyKind.ASYM_PRIVATE)
    priv = _load_private(key.key_bytes)
    if priv.key_size != profile.rsa_bits:
        raise WrongKeyKind(f"{priv.key_size}-bit key does not match profile {profile.profile_id.value}")
    if profile.profile_id is ProfileId.TEST:
        sig = priv.sign(bytes(data), padding.PKCS1v15(), hashes.SHA3_384())
    else:
        sig = priv.sign(bytes(data), _pss(), hashes.SHA3_384())
    return Signature(public_key_of(key).key_id, sig)


def verify(data: bytes, sig: Signature, key: KeyMaterial, profile: CryptoProfile = REFERENCE) -> bool:
    _require(key, KeyKind.ASYM_PUBLIC)
    if sig.signer_key_id != key.key_id or len(sig.sig_bytes) != profile.sig_len:
        return False
    pub = _load_public(key.key_bytes)
    if pub.key_size != profile.rsa_bits:
        return False
    pad = padding.PKCS1v15() if profile.profile_id is ProfileId.TEST else _pss()
    try:
        pub.verify(sig.sig_bytes, bytes(data), pad, hashes.SHA3_384())
    except InvalidSignature:
        return False
    return True


def aead_encrypt(key: KeyMaterial, nonce: bytes, plaintext: bytes, aad: bytes) -> bytes:
    _require(key, KeyKind.SYMMETRIC)
    if len(nonce) != NONCE_LEN:
        raise ValueError("nonce must be 12 bytes")
    return AESGCM(key.key_bytes).encrypt(bytes(nonce), bytes(plaintext), bytes(aad))


def aead_decrypt(key: KeyMaterial, nonce: bytes, ciphertext: bytes, aad: bytes) -> bytes:
    _require(key, KeyKind.SYMMETRIC)
    if len(nonce) != NONCE_LEN:
        raise ValueError("nonce must be 12 bytes")
    if len(ciphertext) < TAG_LEN:
        raise AuthFailure("ciphertext shorter than the tag")
    try:
        return AESGCM(key.key_bytes).decrypt(bytes(nonce), bytes(ciphertext), bytes(aad))
    except InvalidTag:
        raise AuthFailure("AEAD tag mismatch") from None


# Test-profile encapsulation: PKCS#1 v1.5-shaped block whose padding is
# derived from the key and modulus, so the output is reproducible.
_KEM_LABEL = b"aegissat/test-kem/v1"


def _kem_padding(modulus_bytes: bytes, key: bytes, n: int) -> bytes:
    ps = hashlib.shake_256(_KEM_LABEL + modulus_bytes + key).digest(n)
    return bytes(b or 1 for b in ps)


def encapsulate_key(
    session_key: KeyMaterial, recipient_pub: KeyMaterial, profile: CryptoProfile = REFERENCE
) -> bytes:
    _require(session_key, KeyKind.SYMMETRIC)
    _require(recipient_pub, KeyKind.ASYM_PUBLIC)
    pub = _load_public(recipient_pub.key_bytes)
    if profile.profile_id is ProfileId.REFERENCE:
        oaep = padding.OAEP(mgf=padding.MGF1(hashes.SHA384()), algorithm=hashes.SHA384(), label=None)
        return pub.encrypt(session_key.key_bytes, oaep)
    nums = pub.public_numbers()
    k = (nums.n.bit_length() + 7) // 8
    n_bytes = nums.n.to_bytes(k, "big")
    ps = _kem_padding(n_bytes, session_key.key_bytes, k - 3 - SYM_KEY_LEN)
    em = b"\x00\x02" + ps + b"\x00" + session_key.key_bytes
    return pow(int.from_bytes(em, "big"), nums.e, nums.n).to_bytes(k, "big")


def decapsulate_key(
    blob: bytes, recipient_priv: KeyMaterial, profile: CryptoProfile = REFERENCE
) -> KeyMaterial:
    _require(recipient_priv, KeyKind.ASYM_PRIVATE)
    priv = _load_private(recipient_priv.key_bytes)
    if profile.profile_id is ProfileId.REFERENCE:
        oaep = padding.OAEP(mgf=padding.MGF1(hashes.SHA384()), algorithm=hashes.SHA384(), label=None)
        try:
            raw = priv.decrypt(bytes(blob), oaep)
        except ValueError:
            raise DecapsulationFailure("OAEP decryption failed") from None
    else:
        nums = priv.private_numbers()
        n = nums.public_numbers.n
        k = (n.bit_length() + 7) // 8
        c = int.from_bytes(bytes(blob), "big")
        if len(blob) != k or c >= n:
            raise DecapsulationFailure("blob does not fit the modulus")
        em = pow(c, nums.d, n).to_bytes(k, "big")
        raw = em[-SYM_KEY_LEN:]
        expected = b"\x00\x02" + _kem_padding(n.to_bytes(k, "big"), raw, k - 3 - SYM_KEY_LEN) + b"\x00"
        if em[:-SYM_KEY_LEN] != expected:
            raise DecapsulationFailure("padding check failed")
    if len(raw) != SYM_KEY_LEN:
        raise DecapsulationFailure("recovered key has the wrong length")
    return make_key(KeyKind.SYMMETRIC, raw)
