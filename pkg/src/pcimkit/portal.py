"""Receiver portal: the acceptance predicate for PCMs and PCIMs.

Acceptance is a state transition over :class:`PortalState`. Checks run in a
fixed order so every rejection reason is deterministic:

PCM   structure -> replay -> binding -> proof -> roots
PCIM  origin -> finality -> (PCM pipeline)

A rejected message returns the input state object untouched.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, ClassVar, Mapping

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from .attestation import Attestation, GuardianSet, attest, verify_attestation
from .crypto_core import (
    Commitment,
    Identifier,
    Opening,
    ParamBundle,
    commit,
    derive_identifier,
    encodable,
    encode,
    tagged_hash,
    verify_opening,
)
from .errors import PcimError
from .finality import FinalityTag, SimChain, is_final
from .relations import RelationRegistry, StateRoot
from .router import Proof, VerifierRegistry, VkId, verify

SEQ_LABEL = "seq"


class Reason(str, Enum):
    OK = "OK"
    REPLAY_DETECTED = "ReplayDetected"
    ORIGIN_INVALID = "OriginInvalid"
    NOT_FINAL = "NotFinal"
    BINDING_MISMATCH = "BindingMismatch"
    PROOF_INVALID = "ProofInvalid"
    ROOT_MISMATCH = "RootMismatch"
    MALFORMED_MESSAGE = "MalformedMessage"

    @classmethod
    def parse(cls, text: str) -> Reason:
        for reason in cls:
            if reason.value.lower() == text.strip().lower():
                return reason
        raise ValueError(f"unknown acceptance reason {text!r}")


@dataclass(frozen=True)
class AcceptanceResult:
    reason: Reason

    @property
    def accepted(self) -> bool:
        return self.reason is Reason.OK

    def __str__(self) -> str:
        return self.reason.value


@encodable(0x10)
@dataclass(frozen=True)
class Message:
    origin_domain: int
    sender: bytes
    dest_domain: int
    relation_id: int
    body: ParamBundle

    _schema: ClassVar = (
        ("origin_domain", "u32"),
        ("sender", "bytes"),
        ("dest_domain", "u32"),
        ("relation_id", "u32"),
        ("body", ParamBundle),
    )

    @property
    def sequence(self) -> int | None:
        raw = self.body.get(SEQ_LABEL)
        if raw is None or len(raw) != 8:
            return None
        return struct.unpack("<Q", raw)[0]


def seq_entry(sequence: int) -> tuple[str, bytes]:
    return (SEQ_LABEL, struct.pack("<Q", sequence))


@encodable(0x14)
@dataclass(frozen=True)
class PCM:
    m: Message
    commitment: Commitment
    identifier: Identifier
    public_values: ParamBundle
    proof: Proof
    vk_id: VkId
    pre_root: StateRoot
    post_root: StateRoot

    _schema: ClassVar = (
        ("m", Message),
        ("commitment", Commitment),
        ("identifier", Identifier),
        ("public_values", ParamBundle),
        ("proof", Proof),
        ("vk_id", VkId),
        ("pre_root", StateRoot),
        ("post_root", StateRoot),
    )


@encodable(0x12)
@dataclass(frozen=True)
class AttestedEnvelope:
    """The octets a guardian quorum signs for a PCIM."""

    m: Message
    commitment: Commitment
    identifier: Identifier
    finality_tag: FinalityTag

    _schema: ClassVar = (
        ("m", Message),
        ("commitment", Commitment),
        ("identifier", Identifier),
        ("finality_tag", FinalityTag),
    )


@encodable(0x15)
@dataclass(frozen=True)
class PCIM:
    pcm: PCM
    finality_tag: FinalityTag
    attestation: Attestation

    _schema: ClassVar = (("pcm", PCM), ("finality_tag", FinalityTag), ("attestation", Attestation))

    def covered_bytes(self) -> bytes:
        return covered_bytes(self.pcm, self.finality_tag)


def covered_bytes(pcm: PCM, tag: FinalityTag) -> bytes:
    return encode(AttestedEnvelope(pcm.m, pcm.commitment, pcm.identifier, tag))


@dataclass(frozen=True)
class PortalState:
    domain_id: int
    current_root: StateRoot
    relations: RelationRegistry
    router: VerifierRegistry
    replay_registry: frozenset[bytes] = frozenset()
    guardian_sets: Mapping[int, GuardianSet] = field(default_factory=dict)
    sender_chains: Mapping[int, SimChain] = field(default_factory=dict)

    def with_chain(self, chain: SimChain) -> PortalState:
        chains = dict(self.sender_chains)
        chains[chain.domain_id] = chain
        return replace(self, sender_chains=chains)

    def with_guardian_set(self, guardian_set: GuardianSet) -> PortalState:
        sets = dict(self.guardian_sets)
        sets[guardian_set.set_id] = guardian_set
        return replace(self, guardian_sets=sets)

    def fingerprint(self) -> bytes:
        """Digest over the mutable acceptance state (replay registry and root)."""
        material = b"".join(sorted(self.replay_registry)) + self.current_root.digest
        return tagged_hash("root", material)


def _structure_ok(pcm: PCM, state: PortalState) -> bool:
    m = pcm.m
    if m.dest_domain != state.domain_id:
        return False
    seq = m.sequence
    if seq is None:
        return False
    return derive_identifier(m.origin_domain, m.sender, seq) == pcm.identifier


def _roots_ok(pcm: PCM, state: PortalState) -> bool:
    if pcm.pre_root != state.current_root:
        return False
    pv = pcm.public_values
    if "pre_root" in pv or "post_root" in pv:
        return pv.get("pre_root") == pcm.pre_root.digest and pv.get("post_root") == pcm.post_root.digest
    # relations without state roots must not move the root
    return pcm.post_root == pcm.pre_root


def _pcm_pipeline(pcm: PCM, opening: Opening, state: PortalState) -> Reason:
    if not _structure_ok(pcm, state):
        return Reason.MALFORMED_MESSAGE
    if pcm.identifier.digest in state.replay_registry:
        return Reason.REPLAY_DETECTED
    if not (verify_opening(pcm.commitment, opening) and opening.params == pcm.public_values):
        return Reason.BINDING_MISMATCH
    try:
        if state.router.entry(pcm.vk_id).relation_id != pcm.m.relation_id:
            return Reason.PROOF_INVALID
        if not verify(pcm.proof, pcm.public_values, pcm.vk_id, state.router):
            return Reason.PROOF_INVALID
    except PcimError:
        return Reason.PROOF_INVALID
    if not _roots_ok(pcm, state):
        return Reason.ROOT_MISMATCH
    return Reason.OK


def _commit_acceptance(pcm: PCM, state: PortalState) -> PortalState:
    return replace(
        state,
        replay_registry=state.replay_registry | {pcm.identifier.digest},
        current_root=pcm.post_root,
    )


def accept_pcm(pcm: PCM, opening: Opening, state: PortalState) -> tuple[AcceptanceResult, PortalState]:
    reason = _pcm_pipeline(pcm, opening, state)
    if reason is not Reason.OK:
        return AcceptanceResult(reason), state
    return AcceptanceResult(Reason.OK), _commit_acceptance(pcm, state)


def origin_ok(pcim: PCIM, state: PortalState) -> bool:
    guardian_set = state.guardian_sets.get(pcim.attestation.set_id)
    if guardian_set is None:
        return False
    return verify_attestation(guardian_set, pcim.covered_bytes(), pcim.attestation)


def finality_ok(pcim: PCIM, state: PortalState) -> bool:
    tag = pcim.finality_tag
    chain = state.sender_chains.get(tag.domain_id)
    if chain is None or tag.domain_id != pcim.pcm.m.origin_domain:
        return False
    return is_final(chain, tag)


def accept_pcim(pcim: PCIM, opening: Opening, state: PortalState) -> tuple[AcceptanceResult, PortalState]:
    if not origin_ok(pcim, state):
        return AcceptanceResult(Reason.ORIGIN_INVALID), state
    if not finality_ok(pcim, state):
        return AcceptanceResult(Reason.NOT_FINAL), state
    return accept_pcm(pcim.pcm, opening, state)


def relay(pcim: PCIM, mutator: Callable[[PCIM], PCIM]) -> PCIM:
    """Untrusted transport hop: whatever the mutator returns is delivered."""
    return mutator(pcim)


def acceptance_log_line(identifier: Identifier, result: AcceptanceResult, pre_root: StateRoot, post_root: StateRoot) -> str:
    """``hex(identifier) reason hex(pre_root) hex(post_root)``; roots are the portal's before and after."""
    return f"{identifier.hex()} {result.reason.value} {pre_root.hex()} {post_root.hex()}"


def build_pcm(
    m: Message,
    public_values: ParamBundle,
    nonce: bytes,
    proof: Proof,
    vk_id: VkId,
    pre_root: StateRoot,
    post_root: StateRoot,
) -> tuple[PCM, Opening]:
    """Assemble an honest PCM whose committed params are ``public_values``; returns it with its opening."""
    seq = m.sequence
    if seq is None:
        raise ValueError("message body needs an 8-octet 'seq' entry")
    identifier = derive_identifier(m.origin_domain, m.sender, seq)
    opening = Opening(nonce, public_values)
    return PCM(m, commit(public_values, nonce), identifier, public_values, proof, vk_id, pre_root, post_root), opening


def build_pcim(
    pcm: PCM, tag: FinalityTag, guardian_set: GuardianSet, signers: Mapping[int, Ed25519PrivateKey]
) -> PCIM:
    attestation = attest(guardian_set, signers, covered_bytes(pcm, tag))
    return PCIM(pcm, tag, attestation)
