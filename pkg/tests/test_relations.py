from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import merkle_oracle as oracle
from pcimkit.crypto_core import ParamBundle, encode
from pcimkit.errors import BatchChainBroken, DuplicateRelationId, UnknownRelation
from pcimkit.relations import (
    EMPTY_LEAF,
    HASH_PREIMAGE,
    MERKLE_TRANSITION,
    MerkleBatch,
    MerkleTree,
    RelationDescriptor,
    RelationRegistry,
    Side,
    StateRoot,
    UpdateCommand,
    batch_compose,
    check_statement,
    default_registry,
    empty_root,
    merkle_relation,
    merkle_transition_check,
    register_relation,
)


def random_leaves(rng: random.Random, depth: int) -> list[bytes]:
    return [EMPTY_LEAF if rng.random() < 0.4 else rng.randbytes(32) for _ in range(2**depth)]


# -- registry -----------------------------------------------------------------


def test_registry_examples():
    reg = RelationRegistry()
    desc = RelationDescriptor(42, "demo", lambda pv, w: True)
    assert register_relation(desc, reg) == 42
    assert reg.get(42) is desc
    with pytest.raises(DuplicateRelationId):
        register_relation(desc, reg)
    with pytest.raises(UnknownRelation):
        reg.get(43)


def test_batchable_needs_operator():
    with pytest.raises(ValueError):
        RelationDescriptor(1, "x", lambda pv, w: True, batchable=True)


def test_default_registry_ids():
    assert default_registry(4).ids() == [1, 2, 3, 4]


# -- merkle tree and transition check ------------------------------------------


def test_empty_root_matches_oracle():
    for d in range(5):
        assert empty_root(d).digest == oracle.root([EMPTY_LEAF] * 2**d)


def test_tree_matches_oracle_under_writes():
    rng = random.Random(5)
    for depth in (1, 2, 3, 4):
        leaves = random_leaves(rng, depth)
        tree = MerkleTree(depth, leaves)
        assert tree.root.digest == oracle.root(leaves)
        for _ in range(20):
            i, v = rng.randrange(2**depth), rng.randbytes(32)
            tree.set_leaf(i, v)
            leaves[i] = v
            assert tree.root.digest == oracle.root(leaves)
            assert [(s, int(d)) for s, d in tree.path(i)] == oracle.path(leaves, i)


def test_identity_update():
    tree = MerkleTree(4, random_leaves(random.Random(1), 4))
    pre = tree.root
    cmd = UpdateCommand(5, tree.leaves[5], tree.leaves[5], tree.path(5))
    assert merkle_transition_check(pre, pre, cmd)
    assert not merkle_transition_check(pre, StateRoot(bytes(32)), cmd)


def test_honest_update_leaf_3_depth_4():
    rng = random.Random(3)
    leaves = random_leaves(rng, 4)
    tree = MerkleTree(4, leaves)
    new = rng.randbytes(32)
    pre, post, cmd = tree.update(3, new)
    after = list(leaves)
    after[3] = new
    assert pre.digest == oracle.root(leaves)
    assert post.digest == oracle.root(after)
    assert merkle_transition_check(pre, post, cmd)


def test_corrupted_sibling_fails():
    rng = random.Random(3)
    tree = MerkleTree(4, random_leaves(rng, 4))
    pre, post, cmd = tree.update(3, rng.randbytes(32))
    path = list(cmd.merkle_path)
    sib, side = path[2]
    path[2] = (bytes([sib[0] ^ 1]) + sib[1:], side)
    bad = UpdateCommand(cmd.leaf_index, cmd.old_leaf, cmd.new_leaf, tuple(path))
    assert not merkle_transition_check(pre, post, bad)


def test_side_disagreeing_with_index_fails():
    tree = MerkleTree(2)
    pre, post, cmd = tree.update(0, b"\x01" * 32)
    # same path but claim the leaf sits at index 1
    moved = UpdateCommand(1, cmd.old_leaf, cmd.new_leaf, cmd.merkle_path)
    assert not merkle_transition_check(pre, post, moved)


def _mutate(rng: random.Random, leaves, depth):
    """A random claimed statement; honest about half the time."""
    tree = MerkleTree(depth, leaves)
    idx = rng.randrange(2**depth)
    new = rng.randbytes(32) if rng.random() < 0.9 else leaves[idx]
    pre = tree.root.digest
    old = leaves[idx]
    path = [(s, int(d)) for s, d in tree.path(idx)]
    after = list(leaves)
    after[idx] = new
    post = oracle.root(after)
    kind = rng.randrange(8)
    if kind == 1:
        k = rng.randrange(depth)
        s, d = path[k]
        path[k] = (bytes([s[0] ^ 0x80]) + s[1:], d)
    elif kind == 2:
        k = rng.randrange(depth)
        path[k] = (path[k][0], 1 - path[k][1])
    elif kind == 3:
        old = rng.randbytes(32)
    elif kind == 4:
        post = rng.randbytes(32)
    elif kind == 5:
        pre = rng.randbytes(32)
    elif kind == 6:
        idx = (idx + rng.randrange(1, 2**depth)) % 2**depth
    return pre, post, idx, old, new, path


def test_transition_check_agrees_with_oracle_10k():
    rng = random.Random(2024)
    verdicts = [0, 0]
    for _ in range(10_000):
        depth = rng.randint(1, 4)
        leaves = random_leaves(rng, depth)
        pre, post, idx, old, new, path = _mutate(rng, leaves, depth)
        expected = oracle.valid_update(leaves, pre, post, idx, old, new, path)
        cmd = UpdateCommand(idx, old, new, tuple((s, Side(d)) for s, d in path))
        got = merkle_transition_check(StateRoot(pre), StateRoot(post), cmd)
        assert got == expected
        verdicts[got] += 1
    # both verdicts must be well represented
    assert min(verdicts) > 2_000


# -- batching -----------------------------------------------------------------


def chained(rng: random.Random, depth: int, length: int):
    leaves = random_leaves(rng, depth)
    tree = MerkleTree(depth, leaves)
    stmts = [tree.update(rng.randrange(2**depth), rng.randbytes(32)) for _ in range(length)]
    return leaves, tree, stmts


def test_single_statement_compose():
    _, _, stmts = chained(random.Random(1), 3, 1)
    pre, post, w = batch_compose(stmts)
    assert (pre, post) == stmts[0][:2]
    assert check_statement(pre, post, w) == check_statement(*stmts[0])


def test_two_chained_updates():
    rng = random.Random(9)
    leaves, tree, stmts = chained(rng, 4, 2)
    pre, post, w = batch_compose(stmts)
    assert check_statement(pre, post, w)
    after = list(leaves)
    for _, _, cmd in stmts:
        after[cmd.leaf_index] = cmd.new_leaf
    assert post.digest == oracle.root(after) == tree.root.digest


def test_broken_chain():
    rng = random.Random(9)
    _, _, a = chained(rng, 3, 1)
    _, _, b = chained(rng, 3, 1)
    with pytest.raises(BatchChainBroken):
        batch_compose(a + b)


def test_empty_batch():
    with pytest.raises(ValueError):
        batch_compose([])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 4), st.integers(1, 8), st.integers(0, 2**32), st.data())
def test_batch_equivalence(depth, length, seed, data):
    rng = random.Random(seed)
    leaves, tree, stmts = chained(rng, depth, length)
    sequential = all(check_statement(*s, depth=depth) for s in stmts)
    pre, post, w = batch_compose(stmts)
    assert check_statement(pre, post, w, depth=depth) == sequential is True
    assert post == tree.root
    # associativity: any split point composes to the same witness
    k = data.draw(st.integers(1, length))
    left, right = stmts[:k], stmts[k:]
    parts = [batch_compose(left)] + ([batch_compose(right)] if right else [])
    assert batch_compose(parts) == (pre, post, w)
    # iff, other direction: corrupt one step and the batch fails
    j = data.draw(st.integers(0, length - 1))
    steps = list(w.steps)
    cmd = steps[j].command
    bad_cmd = UpdateCommand(cmd.leaf_index, cmd.old_leaf, bytes(b ^ 0xFF for b in cmd.new_leaf), cmd.merkle_path)
    steps[j] = type(steps[j])(bad_cmd, steps[j].post_root)
    assert not check_statement(pre, post, MerkleBatch(tuple(steps)), depth=depth)


def test_merkle_relation_check():
    rel = merkle_relation(4)
    tree = MerkleTree(4)
    pre, post, cmd = tree.update(7, b"\x07" * 32)
    pv = ParamBundle.of(("pre_root", pre.digest), ("post_root", post.digest))
    assert rel.check(pv, encode(cmd))
    assert not rel.check(pv, encode(cmd)[:-1])
    assert not rel.check(ParamBundle.of(("pre_root", pre.digest)), encode(cmd))
    assert not rel.check(pv, encode(pv))
    # wrong depth is rejected
    assert not merkle_relation(3).check(pv, encode(cmd))
    assert rel.id == MERKLE_TRANSITION and rel.batchable


def test_hash_preimage_relation():
    from pcimkit.crypto_core import tagged_hash

    check = default_registry().get(HASH_PREIMAGE).check
    assert check(ParamBundle.of(("h", tagged_hash("commit", b"w"))), b"w")
    assert not check(ParamBundle.of(("h", tagged_hash("commit", b"w"))), b"v")
    assert not check(ParamBundle(), b"w")
