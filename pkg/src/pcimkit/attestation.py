"""Threshold (t-of-n) origin attestation over canonical message bytes.

Signatures are Ed25519 (``cryptography``), verified independently per member.
A guardian quorum is ``threshold`` distinct member signatures over
``tagged_hash("attest", message_bytes)``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import ClassVar, Mapping

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .crypto_core import encodable, tagged_hash
from .errors import InsufficientSigners, SetMismatch

PUBLIC_KEY_SIZE = 32
SIGNATURE_SIZE = 64
MAX_MEMBERS = 255


def default_threshold(n: int) -> int:
    return (2 * n) // 3 + 1


def public_bytes(key: Ed25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def derive_signing_key(seed: bytes) -> Ed25519PrivateKey:
    """Deterministic key from arbitrary seed material (SHA-256 of the seed)."""
    return Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest())


@dataclass(frozen=True)
class GuardianSet:
    set_id: int
    members: tuple[bytes, ...]
    threshold: int

    def __post_init__(self) -> None:
        members = tuple(bytes(m) for m in self.members)
        object.__setattr__(self, "members", members)
        if not 0 <= self.set_id < 2**32:
            raise ValueError("set_id must be a u32")
        if not 1 <= self.threshold <= len(members) <= MAX_MEMBERS:
            raise ValueError(f"need 1 <= threshold ({self.threshold}) <= members ({len(members)}) <= {MAX_MEMBERS}")
        if len(set(members)) != len(members):
            raise ValueError("member keys must be pairwise distinct")
        for key in members:
            if len(key) != PUBLIC_KEY_SIZE:
                raise ValueError("member keys are 32-octet Ed25519 public keys")

    def __len__(self) -> int:
        return len(self.members)


@encodable(0x13)
@dataclass(frozen=True)
class Attestation:
    set_id: int
    signatures: tuple[tuple[int, bytes], ...]
    signed_digest: bytes

    _schema: ClassVar = (
        ("set_id", "u32"),
        ("signatures", ("list", ("tuple", "u8", "bytes"))),
        ("signed_digest", "b32"),
    )

    def __post_init__(self) -> None:
        object.__setattr__(self, "signatures", tuple((int(i), bytes(s)) for i, s in self.signatures))


def generate_guardian_set(
    set_id: int, n: int, threshold: int | None = None, seed: bytes = b""
) -> tuple[GuardianSet, dict[int, Ed25519PrivateKey]]:
    """Build an ``n``-member set with deterministic keys derived from ``seed``."""
    keys = {i: derive_signing_key(seed + struct.pack("<IB", set_id, i)) for i in range(n)}
    members = tuple(public_bytes(keys[i]) for i in range(n))
    return GuardianSet(set_id, members, default_threshold(n) if threshold is None else threshold), keys


def attest(
    guardian_set: GuardianSet, signers: Mapping[int, Ed25519PrivateKey], message_bytes: bytes
) -> Attestation:
    """Sign ``message_bytes`` with every supplied member key.

    ``signers`` maps member index to that member's private key.
    """
    for index, key in signers.items():
        if not 0 <= index < len(guardian_set.members) or public_bytes(key) != guardian_set.members[index]:
            raise ValueError(f"signer {index} is not the matching member of set {guardian_set.set_id}")
    if len(signers) < guardian_set.threshold:
        raise InsufficientSigners(f"{len(signers)} signers, threshold {guardian_set.threshold}")
    digest = tagged_hash("attest", message_bytes)
    sigs = tuple((i, signers[i].sign(digest)) for i in sorted(signers))
    return Attestation(guardian_set.set_id, sigs, digest)


_KEY_CACHE: dict[bytes, Ed25519PublicKey] = {}


def _public_key(raw: bytes) -> Ed25519PublicKey:
    key = _KEY_CACHE.get(raw)
    if key is None:
        key = Ed25519PublicKey.from_public_bytes(raw)
        if len(_KEY_CACHE) < 4096:
            _KEY_CACHE[raw] = key
    return key


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if len(signature) != SIGNATURE_SIZE:
        return False
    try:
        _public_key(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def verify_attestation(guardian_set: GuardianSet, message_bytes: bytes, a: Attestation) -> bool:
    if a.set_id != guardian_set.set_id:
        raise SetMismatch(f"attestation for set {a.set_id}, verifier holds set {guardian_set.set_id}")
    indices = [i for i, _ in a.signatures]
    # structural screen before any signature work
    if any(nxt <= prev for prev, nxt in zip(indices, indices[1:])):
        return False
    if any(i >= len(guardian_set.members) for i in indices):
        return False
    if len(indices) < guardian_set.threshold:
        return False
    digest = tagged_hash("attest", message_bytes)
    if a.signed_digest != digest:
        return False
    valid = 0
    for index, signature in a.signatures:
        if verify_signature(guardian_set.members[index], digest, signature):
            valid += 1
            if valid >= guardian_set.threshold:
                return True
    return False
