from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

import pytest

from pcimkit.attestation import GuardianSet, derive_signing_key, generate_guardian_set
from pcimkit.crypto_core import ParamBundle, tagged_hash
from pcimkit.finality import SimChain, advance, finalize, genesis
from pcimkit.portal import Message, PortalState, build_pcim, build_pcm, seq_entry
from pcimkit.relations import HASH_PREIMAGE, MerkleTree, default_registry
from pcimkit.router import BackendKind, ReceiptProver, VerifierRegistry, prove_reexec

DATA = Path(__file__).parent / "data"
SCENARIOS = Path(__file__).parent.parent / "src" / "pcimkit" / "scenarios"

DEST = 100
ORIGIN = 1
DEPTH = 4


@dataclass
class World:
    """A receiving portal plus one sender chain and one guardian set."""

    state: PortalState
    chain: SimChain
    guardians: GuardianSet
    keys: dict
    prover: ReceiptProver
    vk_reexec: object
    vk_receipt: object
    rng: random.Random = field(default_factory=lambda: random.Random(1))
    seq: int = 0

    def message(self, relation: int = HASH_PREIMAGE, domain: int = ORIGIN, sender: bytes = b"app") -> Message:
        self.seq += 1
        return Message(domain, sender, DEST, relation, ParamBundle.of(seq_entry(self.seq)))

    def preimage_pcm(self, backend: BackendKind = BackendKind.TRANSPARENT_REEXEC, **kw):
        witness = self.rng.randbytes(24)
        pv = ParamBundle.of(("h", tagged_hash("commit", witness)))
        if backend == BackendKind.TRANSPARENT_REEXEC:
            proof, vk = prove_reexec(witness), self.vk_reexec
        else:
            proof, vk = self.prover.prove(self.vk_receipt, pv), self.vk_receipt
        root = self.state.current_root
        return build_pcm(self.message(**kw), pv, self.rng.randbytes(32), proof, vk, root, root)

    def signers(self, count: int | None = None) -> dict:
        count = self.guardians.threshold if count is None else count
        return {i: self.keys[i] for i in range(count)}

    def finalized_pcim(self, **kw):
        pcm, opening = self.preimage_pcm(**kw)
        tag = self.chain.tag_at(self.chain.finalized_height)
        return build_pcim(pcm, tag, self.guardians, self.signers()), opening

    def set_chain(self, chain: SimChain) -> None:
        self.chain = chain
        self.state = self.state.with_chain(chain)


def make_world(n_guardians: int = 4, threshold: int | None = None, depth: int = DEPTH) -> World:
    relations = default_registry(depth)
    router = VerifierRegistry(relations)
    prover = ReceiptProver(derive_signing_key(b"prover"), HASH_PREIMAGE)
    vk_reexec = router.register(BackendKind.TRANSPARENT_REEXEC, HASH_PREIMAGE)
    vk_receipt = router.register(BackendKind.SIGNATURE_RECEIPT, HASH_PREIMAGE, prover.verification_key)
    gs, keys = generate_guardian_set(1, n_guardians, threshold, b"test-guardians")
    chain = finalize(advance(genesis(ORIGIN, 5), 6, 9), 3)
    state = PortalState(DEST, MerkleTree(depth).root, relations, router, guardian_sets={1: gs}, sender_chains={ORIGIN: chain})
    return World(state, chain, gs, keys, prover, vk_reexec, vk_receipt)


@pytest.fixture
def world() -> World:
    return make_world()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
