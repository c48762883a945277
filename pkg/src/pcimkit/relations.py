"""Declared relations: registry, Merkle state-transition relation and its batch operator.

Merkle trees have ``2**depth`` leaves. Leaves are 32-octet values used directly
as level-0 nodes; the empty leaf is all zeros. Internal nodes are
``tagged_hash("root", left || right)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, ClassVar, Iterable, Sequence, Union

from .crypto_core import DIGEST_SIZE, DigestValue, ParamBundle, decode, encodable, tagged_hash
from .errors import BatchChainBroken, DecodingError, DuplicateRelationId, UnknownRelation

DEFAULT_DEPTH = 8
EMPTY_LEAF = bytes(DIGEST_SIZE)

MERKLE_TRANSITION = 1
HASH_PREIMAGE = 2
INBOX_INJECTION = 3
CONSUMPTION_RECEIPT = 4


class Side(IntEnum):
    """Position of the sibling relative to the running node."""

    LEFT = 0
    RIGHT = 1


@encodable(0x32)
@dataclass(frozen=True)
class StateRoot(DigestValue):
    digest: bytes
    _schema: ClassVar = (("digest", "b32"),)


@encodable(0x30)
@dataclass(frozen=True)
class UpdateCommand:
    leaf_index: int
    old_leaf: bytes
    new_leaf: bytes
    merkle_path: tuple[tuple[bytes, Side], ...]

    _schema: ClassVar = (
        ("leaf_index", "u32"),
        ("old_leaf", "b32"),
        ("new_leaf", "b32"),
        ("merkle_path", ("list", ("tuple", "b32", "u8"))),
    )

    def __post_init__(self) -> None:
        path = tuple((bytes(sib), Side(side)) for sib, side in self.merkle_path)
        object.__setattr__(self, "merkle_path", path)
        if len(self.old_leaf) != DIGEST_SIZE or len(self.new_leaf) != DIGEST_SIZE:
            raise ValueError("leaves are 32-octet values")
        if any(len(sib) != DIGEST_SIZE for sib, _ in path):
            raise ValueError("path siblings are 32-octet digests")
        if not 0 <= self.leaf_index < 2 ** len(path):
            raise ValueError(f"leaf_index {self.leaf_index} out of range for depth {len(path)}")

    @property
    def depth(self) -> int:
        return len(self.merkle_path)


@dataclass(frozen=True)
class MerkleStep:
    command: UpdateCommand
    post_root: bytes

    _schema: ClassVar = (("command", UpdateCommand), ("post_root", "b32"))


@encodable(0x31)
@dataclass(frozen=True)
class MerkleBatch:
    """Composed witness: each command with the root it produces."""

    steps: tuple[MerkleStep, ...]

    _schema: ClassVar = (("steps", ("list", MerkleStep)),)

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))


def node_hash(left: bytes, right: bytes) -> bytes:
    return tagged_hash("root", left + right)


def fold_path(leaf: bytes, path: Iterable[tuple[bytes, Side]]) -> bytes:
    node = leaf
    for sibling, side in path:
        node = node_hash(sibling, node) if side == Side.LEFT else node_hash(node, sibling)
    return node


def _sides_match_index(cmd: UpdateCommand) -> bool:
    for level, (_, side) in enumerate(cmd.merkle_path):
        is_right_child = (cmd.leaf_index >> level) & 1
        if side != (Side.LEFT if is_right_child else Side.RIGHT):
            return False
    return True


def merkle_transition_check(pre_root: StateRoot, post_root: StateRoot, cmd: UpdateCommand) -> bool:
    if not _sides_match_index(cmd):
        return False
    return (
        fold_path(cmd.old_leaf, cmd.merkle_path) == pre_root.digest
        and fold_path(cmd.new_leaf, cmd.merkle_path) == post_root.digest
    )


_ZERO_CACHE: dict[int, list[bytes]] = {}


def empty_subtree_roots(depth: int) -> list[bytes]:
    """``result[k]`` is the root of an all-empty subtree of height ``k``."""
    if depth not in _ZERO_CACHE:
        roots = [EMPTY_LEAF]
        for _ in range(depth):
            roots.append(node_hash(roots[-1], roots[-1]))
        _ZERO_CACHE[depth] = roots
    return _ZERO_CACHE[depth]


def empty_root(depth: int = DEFAULT_DEPTH) -> StateRoot:
    return StateRoot(empty_subtree_roots(depth)[depth])


class MerkleTree:
    """Dense Merkle tree holding every level; fine for the small depths used here."""

    def __init__(self, depth: int = DEFAULT_DEPTH, leaves: Sequence[bytes] | None = None):
        if not 0 <= depth <= 20:
            raise ValueError("depth must be in 0..20")
        self.depth = depth
        size = 2**depth
        leaves = list(leaves) if leaves is not None else []
        if len(leaves) > size:
            raise ValueError("too many leaves")
        leaves += [EMPTY_LEAF] * (size - len(leaves))
        if any(len(leaf) != DIGEST_SIZE for leaf in leaves):
            raise ValueError("leaves are 32-octet values")
        self.levels: list[list[bytes]] = [leaves]
        for _ in range(depth):
            below = self.levels[-1]
            self.levels.append([node_hash(below[i], below[i + 1]) for i in range(0, len(below), 2)])

    @property
    def root(self) -> StateRoot:
        return StateRoot(self.levels[-1][0])

    @property
    def leaves(self) -> list[bytes]:
        return list(self.levels[0])

    def copy(self) -> MerkleTree:
        other = MerkleTree.__new__(MerkleTree)
        other.depth = self.depth
        other.levels = [list(level) for level in self.levels]
        return other

    def path(self, index: int) -> tuple[tuple[bytes, Side], ...]:
        out = []
        for level in range(self.depth):
            sibling_index = index ^ 1
            side = Side.LEFT if index & 1 else Side.RIGHT
            out.append((self.levels[level][sibling_index], side))
            index >>= 1
        return tuple(out)

    def set_leaf(self, index: int, value: bytes) -> None:
        if len(value) != DIGEST_SIZE:
            raise ValueError("leaves are 32-octet values")
        self.levels[0][index] = value
        for level in range(self.depth):
            index >>= 1
            below = self.levels[level]
            self.levels[level + 1][index] = node_hash(below[2 * index], below[2 * index + 1])

    def update(self, index: int, new_leaf: bytes) -> tuple[StateRoot, StateRoot, UpdateCommand]:
        """Apply one leaf write; returns the statement ``(pre_root, post_root, cmd)``."""
        pre = self.root
        cmd = UpdateCommand(index, self.levels[0][index], new_leaf, self.path(index))
        self.set_leaf(index, new_leaf)
        return pre, self.root, cmd


Witness = Union[UpdateCommand, MerkleBatch]
Statement = tuple[StateRoot, StateRoot, Witness]


def _as_steps(post_root: StateRoot, witness: Witness) -> tuple[MerkleStep, ...]:
    if isinstance(witness, UpdateCommand):
        return (MerkleStep(witness, post_root.digest),)
    return witness.steps


def batch_compose(statements: Sequence[Statement]) -> tuple[StateRoot, StateRoot, MerkleBatch]:
    """Sequential chaining of transitions. Accepts single commands or already-composed batches."""
    if not statements:
        raise ValueError("cannot compose an empty batch")
    for k, ((_, post, _), (pre_next, _, _)) in enumerate(zip(statements, statements[1:])):
        if post != pre_next:
            raise BatchChainBroken(f"statement {k} ends at {post.hex()[:16]}, statement {k + 1} starts at {pre_next.hex()[:16]}")
    steps: list[MerkleStep] = []
    for _, post, witness in statements:
        steps.extend(_as_steps(post, witness))
    return statements[0][0], statements[-1][1], MerkleBatch(tuple(steps))


def check_statement(pre_root: StateRoot, post_root: StateRoot, witness: Witness, depth: int | None = None) -> bool:
    """True iff every step checks against the running root and the last step lands on ``post_root``."""
    steps = _as_steps(post_root, witness)
    if not steps:
        return pre_root == post_root
    current = pre_root
    for step in steps:
        if depth is not None and step.command.depth != depth:
            return False
        nxt = StateRoot(step.post_root)
        if not merkle_transition_check(current, nxt, step.command):
            return False
        current = nxt
    return current == post_root


@dataclass(frozen=True)
class RelationDescriptor:
    id: int
    name: str
    check: Callable[[ParamBundle, bytes], bool]
    batchable: bool = False
    batch_compose: Callable[[Sequence[Statement]], tuple] | None = None

    def __post_init__(self) -> None:
        if self.batchable and self.batch_compose is None:
            raise ValueError("batchable relations need a batch operator")


class RelationRegistry:
    def __init__(self) -> None:
        self._by_id: dict[int, RelationDescriptor] = {}

    def register(self, desc: RelationDescriptor) -> int:
        if desc.id in self._by_id:
            raise DuplicateRelationId(str(desc.id))
        self._by_id[desc.id] = desc
        return desc.id

    def get(self, relation_id: int) -> RelationDescriptor:
        try:
            return self._by_id[relation_id]
        except KeyError:
            raise UnknownRelation(str(relation_id)) from None

    def __contains__(self, relation_id: object) -> bool:
        return relation_id in self._by_id

    def ids(self) -> list[int]:
        return sorted(self._by_id)


def register_relation(desc: RelationDescriptor, registry: RelationRegistry) -> int:
    return registry.register(desc)


def merkle_relation(depth: int = DEFAULT_DEPTH) -> RelationDescriptor:
    """Public values carry ``pre_root`` and ``post_root``; the witness is an encoded command or batch."""

    def check(public_values: ParamBundle, witness: bytes) -> bool:
        pre, post = public_values.get("pre_root"), public_values.get("post_root")
        if pre is None or post is None or len(pre) != DIGEST_SIZE or len(post) != DIGEST_SIZE:
            return False
        try:
            parsed = decode(witness)
        except DecodingError:
            return False
        if not isinstance(parsed, (UpdateCommand, MerkleBatch)):
            return False
        return check_statement(StateRoot(pre), StateRoot(post), parsed, depth)

    return RelationDescriptor(MERKLE_TRANSITION, "merkle-transition", check, True, batch_compose)


def _hash_preimage_check(public_values: ParamBundle, witness: bytes) -> bool:
    target = public_values.get("h")
    return target is not None and target == tagged_hash("commit", witness)


def _injection_check(public_values: ParamBundle, witness: bytes) -> bool:
    sc = public_values.get("secret_commitment")
    return sc is not None and len(sc) == DIGEST_SIZE and witness == b""


def _receipt_shape_check(public_values: ParamBundle, witness: bytes) -> bool:
    if public_values.labels() != ["identifier", "nullifier", "disclosed"]:
        return False
    if len(public_values["identifier"]) != DIGEST_SIZE or len(public_values["nullifier"]) != DIGEST_SIZE:
        return False
    try:
        return isinstance(decode(public_values["disclosed"]), ParamBundle)
    except DecodingError:
        return False


def default_registry(depth: int = DEFAULT_DEPTH) -> RelationRegistry:
    """Registry with the reserved relation ids 1..4 populated."""
    registry = RelationRegistry()
    registry.register(merkle_relation(depth))
    registry.register(RelationDescriptor(HASH_PREIMAGE, "hash-preimage", _hash_preimage_check))
    registry.register(RelationDescriptor(INBOX_INJECTION, "inbox-injection", _injection_check))
    registry.register(RelationDescriptor(CONSUMPTION_RECEIPT, "consumption-receipt", _receipt_shape_check))
    return registry
