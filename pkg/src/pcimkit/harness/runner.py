"""Deterministic single-threaded simulation of senders, transport, portal and inbox.

All randomness comes from :meth:`Simulation.rng`, which derives an independent
stream from ``(seed, purpose, *labels)``. Message material depends on
``(domain, sequence)`` and chain growth on ``(domain, step)``, so interleaving
two scenarios over disjoint domains does not perturb either one.

Besides the portal's own checks, the simulation keeps a ground-truth ledger of
honestly emitted messages and flags any acceptance that contradicts it as a
*missed* violation.
"""

from __future__ import annotations

import hashlib
import logging
import random
import struct
from dataclasses import dataclass

from ..attestation import Attestation, GuardianSet, generate_guardian_set
from ..crypto_core import ParamBundle, encode, tagged_hash
from ..errors import AlreadyConsumed, NotFound, PcimError, ScenarioInvalid, WrongSecret
from ..finality import SimChain, advance, finalize, genesis, reorg
from ..inbox import (
    ConsumptionTranscript,
    InboxState,
    commit_secret,
    consume,
    entry_from_pcm,
    export_receipt,
    injection_params,
    inject,
    receipt_pcm,
)
from ..portal import (
    PCIM,
    PCM,
    AcceptanceResult,
    Message,
    PortalState,
    accept_pcim,
    accept_pcm,
    acceptance_log_line,
    build_pcim,
    build_pcm,
    seq_entry,
)
from ..relations import (
    HASH_PREIMAGE,
    INBOX_INJECTION,
    MERKLE_TRANSITION,
    MerkleTree,
    batch_compose,
    default_registry,
)
from ..router import BackendKind, ReceiptProver, VerifierRegistry, prove_reexec
from ..attestation import derive_signing_key
from .report import AllocationMatrix
from .scenario import Event, Scenario, validate

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_MISSED = 2
EXIT_INVALID = 3


@dataclass
class Emitted:
    """Everything the honest sender produced for one message."""

    name: str
    domain: int
    relation: int
    backend: BackendKind
    pcm: PCM
    opening: object
    pcim: PCIM | None = None
    secret: bytes | None = None
    secret_nonce: bytes | None = None
    transcript: ConsumptionTranscript | None = None

    @property
    def envelope(self) -> PCM | PCIM:
        return self.pcim if self.pcim is not None else self.pcm

    @property
    def identifier(self):
        return self.pcm.identifier


@dataclass
class RunResult:
    scenario: str
    log: list[str]
    acceptance_log: list[str]
    matrix: AllocationMatrix
    mismatches: list[tuple[int, str, str]]
    violations: list[tuple[str, str]]
    outcomes: list[tuple[int, str]]
    accepted: list[bytes]
    final_root: bytes

    @property
    def status(self) -> int:
        if self.violations:
            return EXIT_MISSED
        if self.mismatches:
            return EXIT_MISMATCH
        return EXIT_OK


class Simulation:
    def __init__(self, scenario: Scenario, seed: int | None = None):
        validate(scenario)
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.matrix = AllocationMatrix()
        self.log: list[str] = []
        self.acceptance_log: list[str] = []
        self.violations: list[tuple[str, str]] = []
        self.accepted: list[bytes] = []
        self._accepted_set: set[bytes] = set()
        self._consumed: set[bytes] = set()
        self.messages: dict[str, Emitted] = {}
        self.honest: dict[bytes, Emitted] = {}
        self.next_seq: dict[int, int] = {}
        self._chain_steps: dict[int, int] = {}

        self.relations = default_registry(scenario.tree_depth)
        self.router = VerifierRegistry(self.relations)
        self.provers: dict[int, ReceiptProver] = {}
        self.vks: dict[tuple[BackendKind, int], object] = {}
        for kind, rel in scenario.vks:
            if kind == BackendKind.SIGNATURE_RECEIPT:
                prover = self.provers.setdefault(
                    rel, ReceiptProver(derive_signing_key(self._seed_bytes("prover", rel)), rel)
                )
                self.vks[(kind, rel)] = self.router.register(kind, rel, prover.verification_key)
            else:
                self.vks[(kind, rel)] = self.router.register(kind, rel, b"")

        self.guardian_sets: dict[int, GuardianSet] = {}
        self.guardian_keys: dict[int, dict] = {}
        for g in scenario.guardian_sets:
            if g.members:
                self.guardian_sets[g.set_id] = GuardianSet(
                    g.set_id, g.members, g.threshold if g.threshold is not None else (2 * len(g.members)) // 3 + 1
                )
                self.guardian_keys[g.set_id] = {}
            else:
                gs, keys = generate_guardian_set(g.set_id, g.size, g.threshold, self._seed_bytes("guardians"))
                self.guardian_sets[g.set_id] = gs
                self.guardian_keys[g.set_id] = keys

        self.chains: dict[int, SimChain] = {
            d.domain_id: genesis(d.domain_id, self._seed_int("genesis", d.domain_id)) for d in scenario.domains
        }
        self.shadow = MerkleTree(scenario.tree_depth)
        self.state = PortalState(
            scenario.dest_domain,
            self.shadow.root,
            self.relations,
            self.router,
            guardian_sets=dict(self.guardian_sets),
            sender_chains=dict(self.chains),
        )
        self.inbox = InboxState()

    # -- randomness ---------------------------------------------------------

    def _seed_bytes(self, purpose: str, *labels: int | str) -> bytes:
        h = hashlib.sha256(struct.pack("<Q", self.seed) + purpose.encode())
        for label in labels:
            h.update(b"|" + str(label).encode())
        return h.digest()

    def _seed_int(self, purpose: str, *labels: int | str) -> int:
        return int.from_bytes(self._seed_bytes(purpose, *labels)[:8], "little")

    def rng(self, purpose: str, *labels: int | str) -> random.Random:
        return random.Random(self._seed_int(purpose, *labels))

    # -- chains -------------------------------------------------------------

    def _set_chain(self, chain: SimChain) -> None:
        self.chains[chain.domain_id] = chain
        self.state = self.state.with_chain(chain)

    def advance(self, domain: int, n: int = 1) -> SimChain:
        cfg = self.scenario.domain(domain)
        step = self._chain_steps.get(domain, 0)
        self._chain_steps[domain] = step + 1
        rng = self.rng("chain", domain, step)
        chain = advance(self.chains[domain], n, rng.getrandbits(64))
        if cfg.reorg_probability > 0 and rng.random() < cfg.reorg_probability:
            room = min(cfg.reorg_max_depth, chain.tip_height - chain.finalized_height)
            if room >= 1:
                chain = reorg(chain, rng.randint(1, room), rng.getrandbits(64))
        if cfg.finality_lag is not None:
            target = chain.tip_height - cfg.finality_lag
            if target > chain.finalized_height:
                chain = finalize(chain, target)
        self._set_chain(chain)
        return chain

    def reorg(self, domain: int, depth: int) -> SimChain:
        step = self._chain_steps.get(domain, 0)
        self._chain_steps[domain] = step + 1
        chain = reorg(self.chains[domain], depth, self._seed_int("reorg", domain, step))
        self._set_chain(chain)
        return chain

    def finalize(self, domain: int, height: int | None = None) -> SimChain:
        chain = self.chains[domain]
        chain = finalize(chain, chain.tip_height if height is None else height)
        self._set_chain(chain)
        return chain

    # -- sender side --------------------------------------------------------

    def sender_of(self, domain: int) -> bytes:
        return b"app@%d" % domain

    def emit(
        self,
        name: str,
        domain: int,
        kind: str = "pcim",
        relation: int = HASH_PREIMAGE,
        backend: BackendKind = BackendKind.TRANSPARENT_REEXEC,
        guardians: int | None = None,
        updates: int = 1,
        tag: str = "tip",
    ) -> Emitted:
        seq = self.next_seq.get(domain, 0)
        self.next_seq[domain] = seq + 1
        rng = self.rng("message", domain, seq)
        secret = secret_nonce = None
        pre_root = self.shadow.root

        if relation == MERKLE_TRANSITION:
            statements = [
                self.shadow.update(rng.randrange(2**self.shadow.depth), rng.randbytes(32)) for _ in range(updates)
            ]
            if len(statements) == 1:
                _, post_root, witness_obj = statements[0]
            else:
                _, post_root, witness_obj = batch_compose(statements)
            witness = encode(witness_obj)
            pv = ParamBundle.of(("pre_root", pre_root.digest), ("post_root", post_root.digest))
        elif relation == HASH_PREIMAGE:
            witness = rng.randbytes(24)
            pv = ParamBundle.of(("h", tagged_hash("commit", witness)))
            post_root = pre_root
        elif relation == INBOX_INJECTION:
            secret = rng.randbytes(32)
            secret_nonce = rng.randbytes(32)
            public = ParamBundle.of(("amount", struct.pack("<Q", rng.randrange(1, 10**9))), ("recipient", rng.randbytes(20)))
            pv = injection_params(commit_secret(secret, public, secret_nonce), public)
            witness = b""
            post_root = pre_root
        else:
            raise ScenarioInvalid(f"relation {relation} cannot be emitted")

        vk_id = self.vks.get((backend, relation))
        if vk_id is None:
            raise ScenarioInvalid(f"no {backend.label} vk for relation {relation}")
        if backend == BackendKind.SIGNATURE_RECEIPT:
            proof = self.provers[relation].prove(vk_id, pv)
        else:
            proof = prove_reexec(witness)

        m = Message(domain, self.sender_of(domain), self.scenario.dest_domain, relation, ParamBundle.of(seq_entry(seq)))
        pcm, opening = build_pcm(m, pv, rng.randbytes(32), proof, vk_id, pre_root, post_root)
        pcim = None
        if kind == "pcim":
            chain = self.chains[domain]
            finality_tag = chain.tag_at(chain.finalized_height if tag == "finalized" else None)
            pcim = self._attest(pcm, finality_tag, guardians)
        em = Emitted(name, domain, relation, backend, pcm, opening, pcim, secret, secret_nonce)
        self.messages[name] = em
        self.honest[pcm.identifier.digest] = em
        return em

    def _attest(self, pcm: PCM, finality_tag, set_id: int) -> PCIM:
        gs = self.guardian_sets[set_id]
        keys = self.guardian_keys[set_id]
        if len(keys) < gs.threshold:
            # verify-only set: the harness cannot sign for it
            return PCIM(pcm, finality_tag, Attestation(set_id, (), bytes(32)))
        signers = {i: keys[i] for i in sorted(keys)[: gs.threshold]}
        return build_pcim(pcm, finality_tag, gs, signers)

    # -- receiver side ------------------------------------------------------

    def deliver(self, envelope: PCM | PCIM, opening, adversarial: bool = False) -> AcceptanceResult:
        pre_root = self.state.current_root
        if isinstance(envelope, PCIM):
            result, new_state = accept_pcim(envelope, opening, self.state)
            pcm = envelope.pcm
        else:
            result, new_state = accept_pcm(envelope, opening, self.state)
            pcm = envelope
        self.matrix.record_acceptance(result.reason, isinstance(envelope, PCIM))
        self.acceptance_log.append(acceptance_log_line(pcm.identifier, result, pre_root, new_state.current_root))
        if result.accepted:
            self._audit_acceptance(envelope, pcm)
            self.accepted.append(pcm.identifier.digest)
            self._accepted_set.add(pcm.identifier.digest)
            if pcm.m.relation_id == INBOX_INJECTION:
                try:
                    self.inbox = inject(entry_from_pcm(pcm), self.inbox)
                except (PcimError, KeyError, ValueError) as exc:
                    log.debug("inbox refused entry: %s", exc)
        self.state = new_state
        return result

    def _violation(self, invariant: str, detail: str) -> None:
        self.violations.append((invariant, detail))
        self.matrix.record_missed(invariant)
        log.warning("uncaught %s violation: %s", invariant, detail)

    def _audit_acceptance(self, envelope: PCM | PCIM, pcm: PCM) -> None:
        ident = pcm.identifier.digest
        if ident in self._accepted_set:
            self._violation("replay_safety", f"identifier {ident.hex()} accepted twice")
        honest = self.honest.get(ident)
        if isinstance(envelope, PCIM):
            if honest is None or (honest.pcm.m, honest.pcm.commitment) != (pcm.m, pcm.commitment):
                self._violation("origin_authenticity", f"{ident.hex()} was never attested by its origin")
            chain = self.chains.get(envelope.finality_tag.domain_id)
            tag = envelope.finality_tag
            canonical = chain is not None and tag.height < len(chain.blocks) and chain.blocks[tag.height].block_hash == tag.block_hash
            if not (canonical and tag.height <= chain.finalized_height):
                self._violation("finality_alignment", f"{ident.hex()} accepted on a non-final observation")
        if honest is not None:
            if pcm.public_values != honest.opening.params or pcm.commitment != honest.pcm.commitment:
                self._violation("parameter_binding", f"{ident.hex()} accepted with non-committed params")
            elif pcm.post_root != honest.pcm.post_root:
                self._violation("parameter_binding", f"{ident.hex()} accepted with a substituted post-root")

    # -- inbox --------------------------------------------------------------

    def consume(self, em: Emitted, secret: bytes) -> str:
        try:
            transcript, self.inbox = consume(em.identifier, secret, em.secret_nonce, self.inbox)
        except WrongSecret:
            self.matrix.record_consumption(caught=True)
            return "WrongSecret"
        except AlreadyConsumed:
            self.matrix.record_consumption(caught=True)
            return "AlreadyConsumed"
        except NotFound:
            self.matrix.record_consumption(caught=True)
            return "NotFound"
        self.matrix.record_consumption(caught=False)
        if secret != em.secret:
            self._violation("private_consumption", f"{em.identifier.hex()} consumed without the committed secret")
        if em.identifier.digest in self._consumed:
            self._violation("private_consumption", f"{em.identifier.hex()} consumed twice")
        self._consumed.add(em.identifier.digest)
        em.transcript = transcript
        return "OK"

    def wrong_secret(self, em: Emitted, attempt: int = 0) -> bytes:
        rng = self.rng("wrong-secret", em.domain, em.identifier.hex(), attempt)
        secret = bytearray(em.secret)
        pos = rng.randrange(len(secret))
        secret[pos] ^= rng.randrange(1, 256)
        return bytes(secret)

    def export(self, em: Emitted) -> AcceptanceResult | None:
        if em.transcript is None:
            return None
        receipt = export_receipt(em.transcript, self.router, self.provers.get(4))
        nonce = self._seed_bytes("receipt", em.identifier.hex())
        pcm, opening = receipt_pcm(receipt, self.scenario.dest_domain, self.scenario.dest_domain, nonce, self.state.current_root)
        self.honest.setdefault(pcm.identifier.digest, Emitted(em.name + "/receipt", em.domain, 4, BackendKind.SIGNATURE_RECEIPT, pcm, opening))
        return self.deliver(pcm, opening)

    # -- event loop ---------------------------------------------------------

    def step(self, e: Event) -> str | None:
        """Apply one scenario event; returns the outcome name for events that have one."""
        from .adversary import apply_mutator

        prefix = f"{e.index:04d}"
        if e.verb in ("emit", "send"):
            em = self.emit(
                e.name,
                e.int_arg("domain"),
                e.arg("kind", "pcim"),
                e.int_arg("relation", HASH_PREIMAGE),
                BackendKind.parse(e.arg("backend", "transparent")),
                e.int_arg("guardians"),
                e.int_arg("updates", 1),
                e.arg("tag", "tip"),
            )
            kind = "pcim" if em.pcim is not None else "pcm"
            self.log.append(f"{prefix} emit {e.name} kind={kind} domain={em.domain} relation={em.relation} id={em.identifier.hex()}")
            if e.verb == "emit":
                return None
            result = self.deliver(em.envelope, em.opening)
            self.log.append(f"{prefix} deliver {e.name} {self.acceptance_log[-1]}")
            return result.reason.value
        if e.verb == "deliver":
            em = self.messages[e.name]
            result = self.deliver(em.envelope, em.opening)
            self.log.append(f"{prefix} deliver {e.name} {self.acceptance_log[-1]}")
            return result.reason.value
        if e.verb == "relay":
            em = self.messages[e.name]
            donor = self.messages.get(e.arg("donor")) if e.arg("donor") else None
            mutator = e.arg("mutator")
            mutated = apply_mutator(self, em, mutator, donor, self.rng("relay", e.index))
            result = self.deliver(mutated, em.opening, adversarial=mutator != "identity")
            self.log.append(f"{prefix} relay:{mutator} {e.name} {self.acceptance_log[-1]}")
            return result.reason.value
        if e.verb in ("advance", "reorg", "finalize"):
            domain = e.int_arg("domain")
            try:
                if e.verb == "advance":
                    chain = self.advance(domain, e.int_arg("n", 1))
                elif e.verb == "reorg":
                    chain = self.reorg(domain, e.int_arg("depth", 1))
                else:
                    chain = self.finalize(domain, e.int_arg("height"))
            except PcimError as exc:
                raise ScenarioInvalid(f"{e.verb} failed: {exc}", e.line, e.verb) from None
            self.log.append(
                f"{prefix} {e.verb} domain={domain} tip={chain.tip_height} finalized={chain.finalized_height} forks={len(chain.fork_store)}"
            )
            return None
        if e.verb == "consume":
            em = self.messages[e.name]
            secret = em.secret if e.arg("secret", "right") == "right" else self.wrong_secret(em, e.index)
            outcome = self.consume(em, secret)
            line = f"{prefix} consume {e.name} {outcome}"
            if outcome == "OK":
                line += f" transcript={encode(em.transcript).hex()}"
            self.log.append(line)
            return outcome
        if e.verb == "export":
            em = self.messages[e.name]
            result = self.export(em)
            if result is None:
                self.log.append(f"{prefix} export {e.name} NoTranscript")
                return "NoTranscript"
            self.log.append(f"{prefix} export {e.name} {self.acceptance_log[-1]}")
            return result.reason.value
        raise ScenarioInvalid(f"unknown event {e.verb!r}", e.line)

    def run(self) -> RunResult:
        mismatches = []
        outcomes = []
        for e in self.scenario.events:
            outcome = self.step(e)
            if outcome is None:
                continue
            outcomes.append((e.index, outcome))
            if e.expect is not None and outcome != e.expect:
                mismatches.append((e.index, e.expect, outcome))
                self.log[-1] += f" expected={e.expect}"
        return RunResult(
            self.scenario.name,
            list(self.log),
            list(self.acceptance_log),
            self.matrix,
            mismatches,
            list(self.violations),
            outcomes,
            list(self.accepted),
            self.state.current_root.digest,
        )


def run_scenario(s: Scenario, seed: int | None = None) -> RunResult:
    """Execute ``s`` end to end. Deterministic in ``(s, seed)``."""
    return Simulation(s, seed).run()
