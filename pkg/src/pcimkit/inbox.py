"""Private inbox: secret-gated consumption with nullifiers and restricted disclosure."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import ClassVar, Mapping, Sequence

from .crypto_core import (
    Commitment,
    DigestValue,
    Identifier,
    ParamBundle,
    commit,
    encodable,
    encode,
    tagged_hash,
)
from .errors import AlreadyConsumed, DuplicateEntry, NoReceiptKey, NotFound, WrongSecret
from .portal import PCM, Message, build_pcm, seq_entry
from .relations import CONSUMPTION_RECEIPT, INBOX_INJECTION, StateRoot
from .router import BackendKind, Proof, ReceiptProver, VerifierRegistry, VkId

SECRET_LABEL = "secret"
SECRET_COMMITMENT_LABEL = "secret_commitment"
RECEIPT_SENDER = b"inbox-receipt"


@dataclass(frozen=True)
class InboxEntry:
    identifier: Identifier
    secret_commitment: Commitment
    public_params: ParamBundle


@encodable(0x50)
@dataclass(frozen=True)
class NullifierSeed:
    identifier: Identifier
    secret: bytes

    _schema: ClassVar = (("identifier", Identifier), ("secret", "bytes"))


@encodable(0x52)
@dataclass(frozen=True)
class Nullifier(DigestValue):
    digest: bytes
    _schema: ClassVar = (("digest", "b32"),)


@encodable(0x51)
@dataclass(frozen=True)
class ConsumptionTranscript:
    identifier: Identifier
    nullifier: Nullifier
    disclosed_outputs: ParamBundle

    _schema: ClassVar = (
        ("identifier", Identifier),
        ("nullifier", Nullifier),
        ("disclosed_outputs", ParamBundle),
    )


@dataclass(frozen=True)
class InboxState:
    entries: Mapping[bytes, InboxEntry] = field(default_factory=dict)
    nullifiers: frozenset[bytes] = frozenset()

    def lookup(self, identifier: Identifier) -> InboxEntry:
        entry = self.entries.get(identifier.digest)
        if entry is None:
            raise NotFound(identifier.hex())
        return entry


def secret_bundle(secret: bytes, public_params: ParamBundle) -> ParamBundle:
    """``secret || public_params`` as one bundle, secret first."""
    if SECRET_LABEL in public_params:
        raise ValueError(f"public params may not use the reserved label {SECRET_LABEL!r}")
    return ParamBundle(((SECRET_LABEL, bytes(secret)),) + public_params.entries)


def commit_secret(secret: bytes, public_params: ParamBundle, nonce: bytes) -> Commitment:
    return commit(secret_bundle(secret, public_params), nonce)


def nullifier_for(identifier: Identifier, secret: bytes) -> Nullifier:
    return Nullifier(tagged_hash("nullifier", encode(NullifierSeed(identifier, bytes(secret)))))


def injection_params(secret_commitment: Commitment, public_params: ParamBundle) -> ParamBundle:
    """Public values of an inbox-injection message."""
    return ParamBundle(((SECRET_COMMITMENT_LABEL, secret_commitment.digest),) + public_params.entries)


def entry_from_pcm(pcm: PCM) -> InboxEntry:
    if pcm.m.relation_id != INBOX_INJECTION:
        raise ValueError("only inbox-injection messages produce inbox entries")
    pv = pcm.public_values
    return InboxEntry(pcm.identifier, Commitment(pv[SECRET_COMMITMENT_LABEL]), pv.without(SECRET_COMMITMENT_LABEL))


def inject(entry: InboxEntry, state: InboxState) -> InboxState:
    if entry.identifier.digest in state.entries:
        raise DuplicateEntry(entry.identifier.hex())
    entries = dict(state.entries)
    entries[entry.identifier.digest] = entry
    return replace(state, entries=entries)


def consume(
    identifier: Identifier,
    secret: bytes,
    nonce: bytes,
    state: InboxState,
    disclosed_labels: Sequence[str] | None = None,
) -> tuple[ConsumptionTranscript, InboxState]:
    """Open the entry's secret commitment and record its nullifier.

    ``disclosed_labels`` is the relation's output schema; ``None`` discloses
    every public param. The secret itself is never disclosed.
    """
    entry = state.lookup(identifier)
    try:
        opened = commit_secret(secret, entry.public_params, nonce) == entry.secret_commitment
    except ValueError:
        opened = False
    if not opened:
        raise WrongSecret(identifier.hex())
    nf = nullifier_for(identifier, secret)
    if nf.digest in state.nullifiers:
        raise AlreadyConsumed(identifier.hex())
    params = entry.public_params
    if disclosed_labels is not None:
        params = ParamBundle(tuple(e for e in params.entries if e[0] in set(disclosed_labels)))
    transcript = ConsumptionTranscript(identifier, nf, params)
    return transcript, replace(state, nullifiers=state.nullifiers | {nf.digest})


def receipt_public_values(transcript: ConsumptionTranscript) -> ParamBundle:
    return ParamBundle.of(
        ("identifier", transcript.identifier.digest),
        ("nullifier", transcript.nullifier.digest),
        ("disclosed", encode(transcript.disclosed_outputs)),
    )


def export_receipt(
    transcript: ConsumptionTranscript, registry: VerifierRegistry, prover: ReceiptProver | None
) -> tuple[Proof, ParamBundle, VkId]:
    """Summarize a consumption as a router-verifiable signature receipt."""
    vk_id = registry.find(CONSUMPTION_RECEIPT, BackendKind.SIGNATURE_RECEIPT)
    if vk_id is None or prover is None:
        raise NoReceiptKey("no signature_receipt key registered for the consumption relation")
    if registry.entry(vk_id).key_material != prover.verification_key:
        raise NoReceiptKey("prover key does not match the registered receipt key")
    pv = receipt_public_values(transcript)
    return prover.prove(vk_id, pv), pv, vk_id


def receipt_sequence(pv: ParamBundle) -> int:
    """Application identifier rule for receipts: first 8 octets of the nullifier."""
    return struct.unpack("<Q", pv["nullifier"][:8])[0]


def receipt_pcm(
    receipt: tuple[Proof, ParamBundle, VkId],
    origin_domain: int,
    dest_domain: int,
    nonce: bytes,
    root: StateRoot,
):
    """Wrap an exported receipt as a PCM for on-chain verification; returns ``(pcm, opening)``."""
    proof, pv, vk_id = receipt
    m = Message(origin_domain, RECEIPT_SENDER, dest_domain, CONSUMPTION_RECEIPT, ParamBundle.of(seq_entry(receipt_sequence(pv))))
    return build_pcm(m, pv, nonce, proof, vk_id, root, root)
