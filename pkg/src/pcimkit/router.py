"""Verifier router: one ``verify(proof, public_values, vk_id)`` entry point over pluggable backends.

Two mock backends stand in for real proof systems:

``signature_receipt``
    Small proof. The payload is an Ed25519 signature by the prover key over
    ``tagged_hash("attest", encode(ReceiptStatement(vk_id, public_values)))``.
    Key material is the 32-octet verification key.
``transparent_reexec``
    No trusted key. The payload is a length-prefixed witness that the verifier
    feeds to the registered relation's ``check``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, ClassVar

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from .attestation import PUBLIC_KEY_SIZE, public_bytes, verify_signature
from .crypto_core import DigestValue, ParamBundle, encodable, encode, tagged_hash
from .errors import BackendMismatch, MalformedProof, UnknownRelation, UnknownVk, VkIntegrityError
from .relations import RelationRegistry


class BackendKind(IntEnum):
    SIGNATURE_RECEIPT = 1
    TRANSPARENT_REEXEC = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> BackendKind:
        aliases = {"receipt": cls.SIGNATURE_RECEIPT, "transparent": cls.TRANSPARENT_REEXEC}
        key = text.strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls[key.upper()]
        except KeyError:
            raise ValueError(f"unknown backend kind {text!r}") from None


@encodable(0x43)
@dataclass(frozen=True)
class VkId(DigestValue):
    digest: bytes
    _schema: ClassVar = (("digest", "b32"),)


@encodable(0x40)
@dataclass(frozen=True)
class VkSeed:
    backend_kind: int
    relation_id: int
    key_material: bytes

    _schema: ClassVar = (("backend_kind", "u8"), ("relation_id", "u32"), ("key_material", "bytes"))


@encodable(0x41)
@dataclass(frozen=True)
class ReceiptStatement:
    vk_id: VkId
    public_values: ParamBundle

    _schema: ClassVar = (("vk_id", VkId), ("public_values", ParamBundle))


@encodable(0x42)
@dataclass(frozen=True)
class Proof:
    backend_kind: BackendKind
    payload: bytes

    _schema: ClassVar = (("backend_kind", "u8"), ("payload", "bytes"))

    def __post_init__(self) -> None:
        object.__setattr__(self, "backend_kind", BackendKind(self.backend_kind))


@dataclass(frozen=True)
class VkEntry:
    vk_id: VkId
    backend_kind: BackendKind
    relation_id: int
    key_material: bytes


def derive_vk_id(backend_kind: BackendKind, relation_id: int, key_material: bytes) -> VkId:
    return VkId(tagged_hash("vkid", encode(VkSeed(int(backend_kind), relation_id, bytes(key_material)))))


def receipt_digest(vk_id: VkId, public_values: ParamBundle) -> bytes:
    return tagged_hash("attest", encode(ReceiptStatement(vk_id, public_values)))


@dataclass(frozen=True)
class VerifierBackend:
    kind: BackendKind
    verify: Callable[[VkEntry, ParamBundle, bytes, RelationRegistry], bool]


def _verify_signature_receipt(entry: VkEntry, public_values: ParamBundle, payload: bytes, relations) -> bool:
    if len(payload) != 64:
        raise MalformedProof(f"signature receipt must be 64 octets, got {len(payload)}")
    return verify_signature(entry.key_material, receipt_digest(entry.vk_id, public_values), payload)


def _verify_transparent(entry: VkEntry, public_values: ParamBundle, payload: bytes, relations) -> bool:
    witness = unpack_witness(payload)
    return bool(relations.get(entry.relation_id).check(public_values, witness))


BACKENDS = {
    BackendKind.SIGNATURE_RECEIPT: VerifierBackend(BackendKind.SIGNATURE_RECEIPT, _verify_signature_receipt),
    BackendKind.TRANSPARENT_REEXEC: VerifierBackend(BackendKind.TRANSPARENT_REEXEC, _verify_transparent),
}


def pack_witness(witness: bytes) -> bytes:
    return struct.pack("<I", len(witness)) + witness


def unpack_witness(payload: bytes) -> bytes:
    if len(payload) < 4:
        raise MalformedProof("missing witness length prefix")
    (n,) = struct.unpack_from("<I", payload)
    if len(payload) != 4 + n:
        raise MalformedProof(f"witness length prefix {n} disagrees with payload size {len(payload) - 4}")
    return payload[4:]


class VerifierRegistry:
    """Append-only vk registry bound to a relation registry."""

    def __init__(self, relations: RelationRegistry):
        self.relations = relations
        self._entries: dict[bytes, VkEntry] = {}

    def register(self, backend_kind: BackendKind, relation_id: int, key_material: bytes = b"") -> VkId:
        backend_kind = BackendKind(backend_kind)
        if relation_id not in self.relations:
            raise UnknownRelation(str(relation_id))
        if backend_kind == BackendKind.SIGNATURE_RECEIPT and len(key_material) != PUBLIC_KEY_SIZE:
            raise ValueError("signature_receipt key material is a 32-octet verification key")
        vk_id = derive_vk_id(backend_kind, relation_id, key_material)
        self._entries[vk_id.digest] = VkEntry(vk_id, backend_kind, relation_id, bytes(key_material))
        return vk_id

    def entry(self, vk_id: VkId) -> VkEntry:
        entry = self._entries.get(vk_id.digest)
        if entry is None:
            raise UnknownVk(vk_id.hex())
        if derive_vk_id(entry.backend_kind, entry.relation_id, entry.key_material) != vk_id:
            raise VkIntegrityError(f"entry filed under {vk_id.hex()} no longer matches its content")
        return entry

    def entries(self) -> list[VkEntry]:
        return [self._entries[k] for k in sorted(self._entries)]

    def __contains__(self, vk_id: object) -> bool:
        return isinstance(vk_id, VkId) and vk_id.digest in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def find(self, relation_id: int, backend_kind: BackendKind) -> VkId | None:
        for entry in self.entries():
            if entry.relation_id == relation_id and entry.backend_kind == backend_kind:
                return entry.vk_id
        return None

    def integrity_ok(self) -> bool:
        return all(
            derive_vk_id(e.backend_kind, e.relation_id, e.key_material).digest == key
            for key, e in self._entries.items()
        )


def register_vk(backend_kind, relation_id: int, key_material: bytes, registry: VerifierRegistry) -> VkId:
    return registry.register(backend_kind, relation_id, key_material)


def verify(proof: Proof, public_values: ParamBundle, vk_id: VkId, registry: VerifierRegistry) -> bool:
    entry = registry.entry(vk_id)
    if proof.backend_kind != entry.backend_kind:
        raise BackendMismatch(f"proof is {proof.backend_kind.label}, vk {vk_id.hex()[:16]} is {entry.backend_kind.label}")
    return BACKENDS[entry.backend_kind].verify(entry, public_values, proof.payload, registry.relations)


def route_table(registry: VerifierRegistry) -> list[tuple[VkId, BackendKind, int]]:
    return [(e.vk_id, e.backend_kind, e.relation_id) for e in registry.entries()]


def dump_registry(registry: VerifierRegistry) -> str:
    lines = [
        f"{e.vk_id.hex()} {e.backend_kind.label} {e.relation_id} {e.key_material.hex() or '-'}"
        for e in registry.entries()
    ]
    return "".join(line + "\n" for line in lines)


def load_registry(text: str, relations: RelationRegistry) -> VerifierRegistry:
    """Rebuild a registry from :func:`dump_registry` output, checking each vk_id."""
    registry = VerifierRegistry(relations)
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"line {n}: expected 4 fields")
        vk_hex, kind, rel, key_hex = parts
        vk_id = registry.register(BackendKind.parse(kind), int(rel), b"" if key_hex == "-" else bytes.fromhex(key_hex))
        if vk_id.hex() != vk_hex:
            raise VkIntegrityError(f"line {n}: vk_id does not match entry content")
    return registry


@dataclass
class ReceiptProver:
    """Holder of a signature_receipt proving key; presumed to run the relation honestly."""

    signing_key: Ed25519PrivateKey
    relation_id: int

    @property
    def verification_key(self) -> bytes:
        return public_bytes(self.signing_key)

    def prove(self, vk_id: VkId, public_values: ParamBundle) -> Proof:
        return Proof(BackendKind.SIGNATURE_RECEIPT, self.signing_key.sign(receipt_digest(vk_id, public_values)))


def prove_reexec(witness: bytes) -> Proof:
    return Proof(BackendKind.TRANSPARENT_REEXEC, pack_witness(witness))
