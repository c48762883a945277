from __future__ import annotations

import random

import pytest

from pcimkit.attestation import derive_signing_key
from pcimkit.crypto_core import ParamBundle, tagged_hash
from pcimkit.errors import BackendMismatch, MalformedProof, UnknownRelation, UnknownVk, VkIntegrityError
from pcimkit.relations import HASH_PREIMAGE, default_registry
from pcimkit.router import (
    BackendKind,
    Proof,
    ReceiptProver,
    VerifierRegistry,
    VkEntry,
    VkId,
    derive_vk_id,
    dump_registry,
    load_registry,
    prove_reexec,
    register_vk,
    route_table,
    verify,
)

W = b"preimage witness"
PV = ParamBundle.of(("h", tagged_hash("commit", W)))


@pytest.fixture
def setup():
    reg = VerifierRegistry(default_registry(4))
    prover = ReceiptProver(derive_signing_key(b"p1"), HASH_PREIMAGE)
    vk_t = register_vk(BackendKind.TRANSPARENT_REEXEC, HASH_PREIMAGE, b"", reg)
    vk_r = register_vk(BackendKind.SIGNATURE_RECEIPT, HASH_PREIMAGE, prover.verification_key, reg)
    return reg, prover, vk_t, vk_r


def test_vk_id_is_self_describing(setup):
    reg, prover, _, vk_r = setup
    e = reg.entry(vk_r)
    assert derive_vk_id(e.backend_kind, e.relation_id, e.key_material) == vk_r


def test_distinct_keys_distinct_ids(setup):
    reg, _, _, vk_r = setup
    other = reg.register(BackendKind.SIGNATURE_RECEIPT, HASH_PREIMAGE, ReceiptProver(derive_signing_key(b"p2"), 2).verification_key)
    assert other != vk_r


def test_unknown_relation(setup):
    reg = setup[0]
    with pytest.raises(UnknownRelation):
        reg.register(BackendKind.TRANSPARENT_REEXEC, 99)


def test_transparent_completeness(setup):
    reg, _, vk_t, _ = setup
    assert verify(prove_reexec(W), PV, vk_t, reg)
    assert not verify(prove_reexec(W + b"x"), PV, vk_t, reg)


def test_receipt_over_other_values_fails(setup):
    reg, prover, _, vk_r = setup
    proof = prover.prove(vk_r, ParamBundle.of(("h", bytes(32))))
    assert not verify(proof, PV, vk_r, reg)
    assert verify(prover.prove(vk_r, PV), PV, vk_r, reg)


def test_backend_mismatch(setup):
    reg, prover, vk_t, vk_r = setup
    with pytest.raises(BackendMismatch):
        verify(prove_reexec(W), PV, vk_r, reg)
    with pytest.raises(BackendMismatch):
        verify(prover.prove(vk_r, PV), PV, vk_t, reg)


def test_unknown_vk(setup):
    reg = setup[0]
    with pytest.raises(UnknownVk):
        verify(prove_reexec(W), PV, VkId(bytes(32)), reg)


def test_malformed_payloads(setup):
    reg, _, vk_t, vk_r = setup
    with pytest.raises(MalformedProof):
        verify(Proof(BackendKind.TRANSPARENT_REEXEC, b"\x05\x00"), PV, vk_t, reg)
    with pytest.raises(MalformedProof):
        verify(Proof(BackendKind.TRANSPARENT_REEXEC, b"\x09\x00\x00\x00abc"), PV, vk_t, reg)
    with pytest.raises(MalformedProof):
        verify(Proof(BackendKind.SIGNATURE_RECEIPT, b"short"), PV, vk_r, reg)


def test_route_table():
    reg = VerifierRegistry(default_registry(4))
    assert route_table(reg) == []
    reg.register(BackendKind.TRANSPARENT_REEXEC, 1)
    reg.register(BackendKind.TRANSPARENT_REEXEC, 2)
    rows = route_table(reg)
    assert len(rows) == 2
    assert [r[0].digest for r in rows] == sorted(r[0].digest for r in rows)
    assert route_table(reg) == rows


def test_integrity_tamper(setup):
    reg, _, _, vk_r = setup
    e = reg.entry(vk_r)
    reg._entries[vk_r.digest] = VkEntry(vk_r, e.backend_kind, e.relation_id, bytes(32))
    assert not reg.integrity_ok()
    with pytest.raises(VkIntegrityError):
        reg.entry(vk_r)


def test_dump_and_load(setup):
    reg = setup[0]
    text = dump_registry(reg)
    assert len(text.splitlines()) == 2
    again = load_registry(text, reg.relations)
    assert dump_registry(again) == text
    first = text.splitlines()[0].split()
    first[0] = "00" * 32
    with pytest.raises(VkIntegrityError):
        load_registry(" ".join(first) + "\n", reg.relations)


def test_public_value_mutation_breaks_both_backends_10k(setup):
    reg, prover, vk_t, vk_r = setup
    rng = random.Random(8)
    for trial in range(10_000):
        w = rng.randbytes(rng.randint(1, 16))
        receipt = trial % 2 == 1
        pv = ParamBundle.of(("h", tagged_hash("commit", w)))
        if receipt:
            # receipts sign the whole bundle, including fields the relation ignores
            pv = ParamBundle(pv.entries + (("memo", rng.randbytes(4)),))
        proof = prover.prove(vk_r, pv) if receipt else prove_reexec(w)
        vk = vk_r if receipt else vk_t
        # every mutation of the values the proof was made for
        entries = list(pv.entries)
        k = rng.randrange(len(entries))
        label, value = entries[k]
        pos = rng.randrange(len(value))
        entries[k] = (label, value[:pos] + bytes([value[pos] ^ rng.randrange(1, 256)]) + value[pos + 1 :])
        mutated = ParamBundle(tuple(entries))
        assert not verify(proof, mutated, vk, reg)


def test_backend_substitution_transparency(setup):
    reg, prover, vk_t, vk_r = setup
    rng = random.Random(6)
    for _ in range(200):
        w = rng.randbytes(12)
        pv = ParamBundle.of(("h", tagged_hash("commit", w)))
        assert verify(prove_reexec(w), pv, vk_t, reg) == verify(prover.prove(vk_r, pv), pv, vk_r, reg) is True


def test_backend_kind_parse():
    assert BackendKind.parse("receipt") is BackendKind.SIGNATURE_RECEIPT
    assert BackendKind.parse("transparent_reexec") is BackendKind.TRANSPARENT_REEXEC
    with pytest.raises(ValueError):
        BackendKind.parse("snark")
