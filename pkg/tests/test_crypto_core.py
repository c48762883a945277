from __future__ import annotations

import hashlib
import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcimkit.crypto_core import (
    Commitment,
    IdentifierSeed,
    Opening,
    ParamBundle,
    commit,
    decode,
    derive_identifier,
    encode,
    format_golden_vector,
    read_golden_vectors,
    tagged_hash,
    verify_opening,
)
from pcimkit.errors import DecodingError, EncodingOverflow, UnknownDomainTag

from conftest import DATA

labels = st.text(alphabet="abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=8)
bundles = st.lists(st.tuples(labels, st.binary(max_size=24)), max_size=5, unique_by=lambda e: e[0]).map(
    lambda es: ParamBundle(tuple(es))
)
nonces = st.binary(min_size=32, max_size=32)


def random_bundle(rng: random.Random) -> ParamBundle:
    n = rng.randrange(4)
    names = rng.sample(["a", "b", "c", "ab", "seq", "h"], n)
    return ParamBundle(tuple((name, rng.randbytes(rng.randrange(4))) for name in names))


# -- encode -------------------------------------------------------------------


def test_empty_bundle_is_tag_then_zero_count():
    out = encode(ParamBundle())
    assert len(out) == 5
    assert out[1:] == b"\x00\x00\x00\x00"


def test_encoding_is_deterministic():
    p = ParamBundle.of(("a", b"\x01"))
    assert encode(p) == encode(p)


def test_entry_order_is_significant():
    p = ParamBundle.of(("a", b"\x01"), ("b", b"\x02"))
    q = ParamBundle.of(("b", b"\x02"), ("a", b"\x01"))
    assert p != q
    assert encode(p) != encode(q)


def test_wire_layout_of_identifier_seed():
    # independent layout: tag, u32 domain, u32 len, sender, u64 seq
    expected = b"\x02" + struct.pack("<II", 7, 3) + b"abc" + struct.pack("<Q", 2**40)
    assert encode(IdentifierSeed(7, b"abc", 2**40)) == expected


def test_duplicate_labels_rejected():
    with pytest.raises(ValueError):
        ParamBundle.of(("a", b""), ("a", b"x"))


def test_decode_rejects_trailing_and_truncated():
    data = encode(ParamBundle.of(("a", b"xyz")))
    with pytest.raises(DecodingError):
        decode(data + b"\x00")
    with pytest.raises(DecodingError):
        decode(data[:-1])
    with pytest.raises(DecodingError):
        decode(b"\xee")


def test_integer_out_of_range_rejected():
    with pytest.raises(ValueError):
        encode(IdentifierSeed(2**32, b"", 0))


def test_length_prefix_overflow(monkeypatch):
    from pcimkit import crypto_core

    monkeypatch.setattr(crypto_core, "MAX_LENGTH", 3)
    with pytest.raises(EncodingOverflow):
        encode(ParamBundle.of(("a", b"four")))


@settings(max_examples=300, deadline=None)
@given(bundles)
def test_round_trip(p):
    assert decode(encode(p)) == p


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.binary(max_size=16), st.integers(0, 2**64 - 1))
def test_identifier_seed_round_trip(d, s, q):
    seed = IdentifierSeed(d, s, q)
    assert decode(encode(seed)) == seed


@settings(max_examples=500, deadline=None)
@given(bundles, bundles)
def test_injective_hypothesis(p, q):
    assert (encode(p) == encode(q)) == (p == q)


def test_injective_randomized_10k():
    rng = random.Random(20)
    seen: dict[bytes, object] = {}
    for _ in range(10_000):
        if rng.random() < 0.5:
            v = random_bundle(rng)
        else:
            v = IdentifierSeed(rng.randrange(3), rng.randbytes(rng.randrange(3)), rng.randrange(3))
        e = encode(v)
        assert seen.setdefault(e, v) == v
    # small alphabets force many equal values; distinct values must still be many
    assert len(seen) > 100


# -- tagged hash --------------------------------------------------------------


def oracle_hash(tag: str, payload: bytes) -> bytes:
    t = tag.encode()
    return hashlib.sha256(struct.pack("<I", len(t)) + t + payload).digest()


def test_hash_deterministic_and_separated():
    p = b"payload"
    assert tagged_hash("commit", p) == tagged_hash("commit", p)
    assert tagged_hash("commit", p) != tagged_hash("ident", p)
    assert oracle_hash("commit", p) == tagged_hash("commit", p)


def test_unknown_tag():
    with pytest.raises(UnknownDomainTag):
        tagged_hash("other", b"")


def test_golden_vectors():
    vectors = read_golden_vectors((DATA / "golden_vectors.txt").read_text().splitlines())
    assert len(vectors) >= 10
    for tag, payload, digest in vectors:
        assert tagged_hash(tag, payload) == digest
        assert format_golden_vector(tag, payload).split()[2] == digest.hex()


def test_commit_empty_bundle_zero_nonce_golden():
    vectors = {(t, p): d for t, p, d in read_golden_vectors((DATA / "golden_vectors.txt").read_text().splitlines())}
    payload = bytes(32) + encode(ParamBundle())
    assert commit(ParamBundle(), bytes(32)).digest == vectors[("commit", payload)]
    assert tagged_hash("commit", b"") == vectors[("commit", b"")]


# -- identifiers --------------------------------------------------------------


def test_identifier_examples():
    assert derive_identifier(1, b"s", 0) == derive_identifier(1, b"s", 0)
    assert derive_identifier(1, b"s", 0) != derive_identifier(1, b"s", 1)
    assert derive_identifier(1, b"s", 5) != derive_identifier(2, b"s", 5)


def test_identifier_uniqueness_100k():
    rng = random.Random(3)
    triples = set()
    while len(triples) < 100_000:
        triples.add((rng.randrange(2**32), rng.randbytes(rng.randrange(1, 9)), rng.randrange(2**64)))
    ids = {derive_identifier(*t).digest for t in triples}
    assert len(ids) == 100_000


# -- commitments --------------------------------------------------------------


def test_commit_examples():
    p = ParamBundle.of(("x", b"1"))
    n1, n2 = bytes(32), b"\x01" * 32
    assert commit(p, n1) == commit(p, n1)
    assert commit(p, n1) != commit(p, n2)


def test_verify_opening_examples():
    p = ParamBundle.of(("x", b"\x10\x20"))
    n = b"\x07" * 32
    c = commit(p, n)
    assert verify_opening(c, Opening(n, p))
    assert not verify_opening(c, Opening(n, ParamBundle.of(("x", b"\x11\x20"))))
    assert not verify_opening(c, Opening(b"\x08" * 32, p))


@settings(max_examples=300, deadline=None)
@given(bundles, nonces)
def test_opening_completeness(p, n):
    assert verify_opening(commit(p, n), Opening(n, p))


def test_commitment_binding_100k():
    rng = random.Random(4)
    p = ParamBundle.of(("amount", b"\x05"), ("to", b"bob"))
    n = rng.randbytes(32)
    target = commit(p, n)
    for _ in range(100_000):
        p2 = random_bundle(rng)
        n2 = n if rng.random() < 0.5 else rng.randbytes(32)
        if (p2, n2) == (p, n):
            continue
        assert commit(p2, n2) != target


def test_digest_length_enforced():
    with pytest.raises(ValueError):
        Commitment(b"short")
