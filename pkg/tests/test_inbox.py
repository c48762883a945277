from __future__ import annotations

import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcimkit.attestation import derive_signing_key
from pcimkit.crypto_core import ParamBundle, derive_identifier, encode
from pcimkit.errors import AlreadyConsumed, DuplicateEntry, NoReceiptKey, NotFound, WrongSecret
from pcimkit.inbox import (
    InboxEntry,
    InboxState,
    commit_secret,
    consume,
    export_receipt,
    inject,
    nullifier_for,
    receipt_pcm,
)
from pcimkit.portal import PortalState, Reason, accept_pcm
from pcimkit.relations import CONSUMPTION_RECEIPT, MerkleTree, default_registry
from pcimkit.router import BackendKind, ReceiptProver, VerifierRegistry, verify

PUBLIC = ParamBundle.of(("amount", b"\x10\x00"), ("recipient", b"alice"))


def make_entry(rng: random.Random, seq: int = 0, secret_len: int = 32):
    secret, nonce = rng.randbytes(secret_len), rng.randbytes(32)
    ident = derive_identifier(1, b"bridge", seq)
    return InboxEntry(ident, commit_secret(secret, PUBLIC, nonce), PUBLIC), secret, nonce


@pytest.fixture
def receipts():
    reg = VerifierRegistry(default_registry(4))
    prover = ReceiptProver(derive_signing_key(b"inbox-prover"), CONSUMPTION_RECEIPT)
    reg.register(BackendKind.SIGNATURE_RECEIPT, CONSUMPTION_RECEIPT, prover.verification_key)
    return reg, prover


def test_inject_and_lookup():
    entry, _, _ = make_entry(random.Random(1))
    state = inject(entry, InboxState())
    assert state.lookup(entry.identifier) == entry
    with pytest.raises(DuplicateEntry):
        inject(entry, state)
    with pytest.raises(NotFound):
        state.lookup(derive_identifier(9, b"x", 9))


def test_consume_once():
    entry, secret, nonce = make_entry(random.Random(2))
    state = inject(entry, InboxState())
    transcript, after = consume(entry.identifier, secret, nonce, state)
    assert transcript.nullifier == nullifier_for(entry.identifier, secret)
    assert transcript.nullifier.digest in after.nullifiers
    assert transcript.disclosed_outputs == PUBLIC
    with pytest.raises(AlreadyConsumed):
        consume(entry.identifier, secret, nonce, after)


def test_wrong_secret_records_nothing():
    entry, secret, nonce = make_entry(random.Random(3))
    state = inject(entry, InboxState())
    with pytest.raises(WrongSecret):
        consume(entry.identifier, secret[:-1] + b"\x00", nonce, state)
    assert not state.nullifiers
    with pytest.raises(NotFound):
        consume(derive_identifier(5, b"", 5), secret, nonce, state)


def test_disclosure_schema():
    entry, secret, nonce = make_entry(random.Random(4))
    state = inject(entry, InboxState())
    transcript, _ = consume(entry.identifier, secret, nonce, state, disclosed_labels=["amount"])
    assert transcript.disclosed_outputs.labels() == ["amount"]


def test_nullifier_unlinkable_across_identifiers():
    s = b"\x42" * 32
    assert nullifier_for(derive_identifier(1, b"a", 0), s) != nullifier_for(derive_identifier(1, b"a", 1), s)


def test_export_receipt_round_trip(receipts):
    reg, prover = receipts
    entry, secret, nonce = make_entry(random.Random(5))
    transcript, _ = consume(entry.identifier, secret, nonce, inject(entry, InboxState()))
    proof, pv, vk = export_receipt(transcript, reg, prover)
    assert verify(proof, pv, vk, reg)
    assert pv.labels() == ["identifier", "nullifier", "disclosed"]
    mutated = ParamBundle.of(("identifier", pv["identifier"]), ("nullifier", pv["nullifier"]), ("disclosed", encode(ParamBundle())))
    assert not verify(proof, mutated, vk, reg)


def test_export_without_key():
    entry, secret, nonce = make_entry(random.Random(6))
    transcript, _ = consume(entry.identifier, secret, nonce, inject(entry, InboxState()))
    empty = VerifierRegistry(default_registry(4))
    with pytest.raises(NoReceiptKey):
        export_receipt(transcript, empty, ReceiptProver(derive_signing_key(b"x"), CONSUMPTION_RECEIPT))


def test_receipt_replay_at_portal(receipts):
    reg, prover = receipts
    entry, secret, nonce = make_entry(random.Random(7))
    transcript, _ = consume(entry.identifier, secret, nonce, inject(entry, InboxState()))
    receipt = export_receipt(transcript, reg, prover)
    root = MerkleTree(4).root
    portal = PortalState(100, root, reg.relations, reg)
    pcm, opening = receipt_pcm(receipt, 100, 100, b"\x01" * 32, root)
    result, portal = accept_pcm(pcm, opening, portal)
    assert result.reason is Reason.OK
    # the application identifier rule maps the same receipt to the same identifier
    pcm2, opening2 = receipt_pcm(receipt, 100, 100, b"\x02" * 32, root)
    assert pcm2.identifier == pcm.identifier
    assert accept_pcm(pcm2, opening2, portal)[0].reason is Reason.REPLAY_DETECTED


def test_secret_never_in_outputs_1k(receipts):
    reg, prover = receipts
    rng = random.Random(8)
    for seq in range(1_000):
        entry, secret, nonce = make_entry(rng, seq, secret_len=rng.randint(16, 48))
        transcript, _ = consume(entry.identifier, secret, nonce, inject(entry, InboxState()))
        proof, pv, vk = export_receipt(transcript, reg, prover)
        blobs = [encode(transcript), encode(pv), proof.payload, transcript.nullifier.hex().encode()]
        assert not any(secret in b for b in blobs)
        assert secret.hex() not in transcript.nullifier.hex()


def test_wrong_secret_perturbations_10k():
    rng = random.Random(9)
    entry, secret, nonce = make_entry(rng)
    state = inject(entry, InboxState())
    rejected = 0
    for _ in range(10_000):
        bad = bytearray(secret)
        for _ in range(rng.randint(1, 3)):
            bad[rng.randrange(len(bad))] ^= rng.randrange(1, 256)
        if rng.random() < 0.1:
            bad = bad[: rng.randrange(len(bad))]
        if bytes(bad) == secret:
            continue
        with pytest.raises(WrongSecret):
            consume(entry.identifier, bytes(bad), nonce, state)
        rejected += 1
    assert rejected > 9_900
    assert consume(entry.identifier, secret, nonce, state)[0].identifier == entry.identifier


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.booleans()), max_size=40))
def test_double_consumption_impossible(ops):
    rng = random.Random(len(ops))
    made = [make_entry(rng, seq) for seq in range(5)]
    state = InboxState()
    for entry, _, _ in made:
        state = inject(entry, state)
    consumed = set()
    for k, right in ops:
        entry, secret, nonce = made[k]
        try:
            _, state = consume(entry.identifier, secret if right else secret[::-1], nonce, state)
        except (WrongSecret, AlreadyConsumed):
            continue
        assert k not in consumed
        consumed.add(k)
    assert len(state.nullifiers) == len(consumed)


def test_entry_state_is_persistent():
    entry, secret, nonce = make_entry(random.Random(10))
    before = inject(entry, InboxState())
    _, after = consume(entry.identifier, secret, nonce, before)
    assert not before.nullifiers and after.nullifiers
    assert replace(after, nullifiers=frozenset()) == before
