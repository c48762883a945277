"""Simulated sender chains with reorgs, a finalized-height watermark and the finality predicate."""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass, field, replace
from typing import ClassVar, Mapping

from .crypto_core import DIGEST_SIZE, encodable, encode, tagged_hash
from .errors import DomainMismatch, FinalityBeyondTip, FinalityRegression, ReorgIntoFinalized

ZERO_HASH = bytes(DIGEST_SIZE)


@encodable(0x20)
@dataclass(frozen=True)
class BlockHeader:
    domain_id: int
    height: int
    parent_hash: bytes
    draw: int

    _schema: ClassVar = (("domain_id", "u32"), ("height", "u64"), ("parent_hash", "b32"), ("draw", "u64"))


@dataclass(frozen=True)
class Block:
    height: int
    block_hash: bytes
    parent_hash: bytes


@encodable(0x11)
@dataclass(frozen=True)
class FinalityTag:
    domain_id: int
    height: int
    block_hash: bytes

    _schema: ClassVar = (("domain_id", "u32"), ("height", "u64"), ("block_hash", "b32"))


@dataclass(frozen=True)
class SimChain:
    """Append-only canonical chain; ``blocks[h]`` is the block at height ``h``.

    ``fork_store`` maps abandoned block hashes to their heights.
    """

    domain_id: int
    blocks: tuple[Block, ...]
    finalized_height: int = 0
    fork_store: Mapping[bytes, int] = field(default_factory=dict)

    @property
    def tip_height(self) -> int:
        return self.blocks[-1].height

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def block_at(self, height: int) -> Block | None:
        if 0 <= height < len(self.blocks):
            return self.blocks[height]
        return None

    def tag_at(self, height: int | None = None) -> FinalityTag:
        block = self.tip if height is None else self.blocks[height]
        return FinalityTag(self.domain_id, block.height, block.block_hash)


def _make_block(domain_id: int, height: int, parent_hash: bytes, rng: random.Random) -> Block:
    header = BlockHeader(domain_id, height, parent_hash, rng.getrandbits(64))
    return Block(height, tagged_hash("root", encode(header)), parent_hash)


def genesis(domain_id: int, rng_seed: int = 0) -> SimChain:
    """Chain holding only the genesis block, which is final from the start."""
    rng = random.Random(rng_seed)
    return SimChain(domain_id, (_make_block(domain_id, 0, ZERO_HASH, rng),), 0, {})


def _extend(chain: SimChain, blocks: list[Block], n_blocks: int, rng: random.Random) -> None:
    for _ in range(n_blocks):
        parent = blocks[-1]
        blocks.append(_make_block(chain.domain_id, parent.height + 1, parent.block_hash, rng))


def advance(chain: SimChain, n_blocks: int, rng_seed: int) -> SimChain:
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    blocks = list(chain.blocks)
    _extend(chain, blocks, n_blocks, random.Random(rng_seed))
    return replace(chain, blocks=tuple(blocks))


def reorg(chain: SimChain, depth: int, rng_seed: int) -> SimChain:
    """Abandon the top ``depth`` blocks and grow a strictly longer branch (``depth + 1`` blocks)."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if depth > chain.tip_height - chain.finalized_height:
        raise ReorgIntoFinalized(
            f"depth {depth} crosses finalized height {chain.finalized_height} (tip {chain.tip_height})"
        )
    keep = len(chain.blocks) - depth
    abandoned = chain.blocks[keep:]
    forks = dict(chain.fork_store)
    forks.update((b.block_hash, b.height) for b in abandoned)
    blocks = list(chain.blocks[:keep])
    # bind the draw to the branch being replaced so a reused seed cannot rebuild it
    rng = random.Random(hashlib.sha256(struct.pack("<Q", rng_seed & (2**64 - 1)) + chain.tip.block_hash).digest())
    _extend(chain, blocks, depth + 1, rng)
    return replace(chain, blocks=tuple(blocks), fork_store=forks)


def finalize(chain: SimChain, new_finalized_height: int) -> SimChain:
    if new_finalized_height < chain.finalized_height:
        raise FinalityRegression(f"{new_finalized_height} < {chain.finalized_height}")
    if new_finalized_height > chain.tip_height:
        raise FinalityBeyondTip(f"{new_finalized_height} > tip {chain.tip_height}")
    if new_finalized_height == chain.finalized_height:
        return chain
    return replace(chain, finalized_height=new_finalized_height)


def is_final(chain: SimChain, tag: FinalityTag) -> bool:
    if tag.domain_id != chain.domain_id:
        raise DomainMismatch(f"tag for domain {tag.domain_id}, chain is domain {chain.domain_id}")
    if tag.height > chain.finalized_height:
        return False
    block = chain.block_at(tag.height)
    return block is not None and block.block_hash == tag.block_hash
