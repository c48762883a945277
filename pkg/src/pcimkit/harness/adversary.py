"""Relay mutators and randomized adversary families.

These are fixed randomized strategies, not a quantification over all
efficient adversaries; a clean run is evidence, not proof.

replayer            resubmits accepted identifiers inside shuffled schedules
substituter         relays that keep (m, commitment, identifier) but swap anything else
prefinality_forker  delivers messages tagged to unfinalized or later-abandoned blocks
origin_forger       forges attestations while holding fewer than threshold member keys
reorderer           delivers chained state updates out of order, then retries honestly
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from ..attestation import Attestation, derive_signing_key
from ..crypto_core import Identifier, ParamBundle, tagged_hash
from ..errors import ScenarioInvalid
from ..portal import PCIM, PCM, Message, Reason, build_pcm, covered_bytes, seq_entry
from ..relations import HASH_PREIMAGE, INBOX_INJECTION, MERKLE_TRANSITION, StateRoot
from ..router import BackendKind, Proof, prove_reexec
from .report import AllocationMatrix
from .runner import Emitted, Simulation
from .scenario import ADVERSARY_KINDS, ALL_VKS, DomainConfig, GuardianConfig, Scenario

SUBSTITUTION_MUTATORS = (
    "swap_public_values",
    "swap_proof",
    "swap_statement",
    "swap_roots",
    "swap_vk",
    "flip_public_value",
    "flip_proof",
)


def _map_pcm(envelope: PCM | PCIM, **changes) -> PCM | PCIM:
    if isinstance(envelope, PCIM):
        return replace(envelope, pcm=replace(envelope.pcm, **changes))
    return replace(envelope, **changes)


def _flip(data: bytes, rng: random.Random) -> bytes:
    if not data:
        return b"\x01"
    out = bytearray(data)
    out[rng.randrange(len(out))] ^= rng.randrange(1, 256)
    return bytes(out)


def _other_vk(sim: Simulation, pcm: PCM, donor: Emitted | None, rng: random.Random):
    if donor is not None and donor.pcm.vk_id != pcm.vk_id:
        return donor.pcm.vk_id
    others = [vk for vk in sim.vks.values() if vk != pcm.vk_id]
    if others:
        return rng.choice(others)
    from ..router import VkId

    return VkId(rng.randbytes(32))


def apply_mutator(sim: Simulation, em: Emitted, mutator: str, donor: Emitted | None, rng: random.Random):
    """Return a mutated copy of ``em``'s envelope. Only ``corrupt_identifier`` and the
    attestation mutators touch the (m, commitment, identifier) triple."""
    env = em.envelope
    pcm = em.pcm
    if mutator == "identity":
        return env
    if mutator == "swap_public_values":
        pv = donor.pcm.public_values if donor is not None else ParamBundle.of(("h", rng.randbytes(32)))
        if pv == pcm.public_values:
            pv = ParamBundle.of(("h", rng.randbytes(32)))
        return _map_pcm(env, public_values=pv)
    if mutator == "flip_public_value":
        entries = list(pcm.public_values.entries)
        k = rng.randrange(len(entries))
        entries[k] = (entries[k][0], _flip(entries[k][1], rng))
        return _map_pcm(env, public_values=ParamBundle(tuple(entries)))
    if mutator == "swap_proof":
        proof = donor.pcm.proof if donor is not None and donor.pcm.proof != pcm.proof else Proof(pcm.proof.backend_kind, rng.randbytes(len(pcm.proof.payload)))
        return _map_pcm(env, proof=proof)
    if mutator == "flip_proof":
        return _map_pcm(env, proof=Proof(pcm.proof.backend_kind, _flip(pcm.proof.payload, rng)))
    if mutator == "swap_statement":
        # a valid proof, but for different public values
        if donor is None:
            witness = rng.randbytes(24)
            pv = ParamBundle.of(("h", tagged_hash("commit", witness)))
            vk = sim.vks.get((BackendKind.TRANSPARENT_REEXEC, HASH_PREIMAGE), pcm.vk_id)
            return _map_pcm(env, public_values=pv, proof=prove_reexec(witness), vk_id=vk)
        return _map_pcm(env, public_values=donor.pcm.public_values, proof=donor.pcm.proof, vk_id=donor.pcm.vk_id)
    if mutator == "swap_roots":
        choice = rng.randrange(3)
        pre = StateRoot(rng.randbytes(32)) if choice != 1 else pcm.pre_root
        post = StateRoot(rng.randbytes(32)) if choice != 0 else pcm.post_root
        return _map_pcm(env, pre_root=pre, post_root=post)
    if mutator == "swap_vk":
        return _map_pcm(env, vk_id=_other_vk(sim, pcm, donor, rng))
    if mutator == "corrupt_identifier":
        ident = donor.pcm.identifier if donor is not None else Identifier(rng.randbytes(32))
        return _map_pcm(env, identifier=ident)
    if mutator in ("forge_origin", "drop_signatures"):
        if not isinstance(env, PCIM):
            raise ScenarioInvalid(f"{mutator} needs a pcim")
        att = env.attestation
        if mutator == "drop_signatures":
            gs = sim.guardian_sets[att.set_id]
            kept = att.signatures[: max(0, gs.threshold - 1)]
            return replace(env, attestation=replace(att, signatures=kept))
        fake = [derive_signing_key(rng.randbytes(32)) for _ in att.signatures]
        sigs = tuple((i, key.sign(att.signed_digest)) for (i, _), key in zip(att.signatures, fake))
        return replace(env, attestation=replace(att, signatures=sigs))
    raise ScenarioInvalid(f"unknown mutator {mutator!r}")


@dataclass
class AdversarySummary:
    kind: str
    trials: int
    attempts: int = 0
    caught: int = 0
    missed: int = 0
    accepted: int = 0
    distinct_honest: int = 0
    honest_rejected: int = 0
    accepted_ids: list[bytes] = field(default_factory=list, repr=False)
    matrix: AllocationMatrix | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.missed == 0

    def line(self) -> str:
        return (
            f"adversary={self.kind} trials={self.trials} attempts={self.attempts} caught={self.caught} "
            f"missed={self.missed} accepted={self.accepted} distinct_honest={self.distinct_honest} "
            f"honest_rejected={self.honest_rejected}"
        )


def _suite_scenario(base: Scenario, kind: str) -> Scenario:
    """Copy of ``base`` with no events, manual finality, every vk and at least one guardian set."""
    domains = base.domains or (DomainConfig(1),)
    # the forker needs unfinalized blocks to aim at
    domains = tuple(replace(d, finality_lag=None, reorg_probability=0.0) for d in domains)
    guardians = base.guardian_sets or (GuardianConfig(1, size=4),)
    if kind == "origin_forger" and all(not g.size for g in guardians):
        raise ScenarioInvalid("origin_forger needs a generated guardian set")
    # every family may emit on any relation/backend pair
    return replace(base, domains=domains, guardian_sets=guardians, vks=ALL_VKS, events=())


class _Trial:
    def __init__(self, sim: Simulation, summary: AdversarySummary, rng: random.Random):
        self.sim = sim
        self.summary = summary
        self.rng = rng
        self.domain = sim.scenario.domains[0].domain_id
        g = next((g for g in sim.scenario.guardian_sets if g.size), sim.scenario.guardian_sets[0])
        self.set_id = g.set_id
        self.counter = 0

    def name(self) -> str:
        self.counter += 1
        return f"adv{self.counter}"

    def final_emit(self, relation: int = HASH_PREIMAGE, kind: str = "pcim", backend=None) -> Emitted:
        """Emit on the tip, then advance and finalize so the tag is final."""
        sim = self.sim
        if backend is None:
            choices = [b for b in BackendKind if (b, relation) in sim.vks]
            backend = self.rng.choice(choices)
        em = sim.emit(self.name(), self.domain, kind, relation, backend, self.set_id)
        sim.advance(self.domain, 1)
        sim.finalize(self.domain)
        return em

    def attack(self, envelope, opening, honest_ok=False) -> Reason:
        result = self.sim.deliver(envelope, opening, adversarial=True)
        self.summary.attempts += 1
        if not result.accepted:
            self.summary.caught += 1
        else:
            self.summary.accepted += 1
        return result.reason

    def honest(self, em: Emitted) -> Reason:
        result = self.sim.deliver(em.envelope, em.opening)
        if result.accepted:
            self.summary.accepted += 1
        else:
            self.summary.honest_rejected += 1
        return result.reason


def _replayer(t: _Trial) -> None:
    rng = t.rng
    use_pcim = rng.random() < 0.5
    k = rng.randint(3, 6)
    ems = [t.final_emit(HASH_PREIMAGE, "pcim" if use_pcim else "pcm") for _ in range(k)]
    dups = [rng.choice(ems) for _ in range(rng.randint((k + 1) // 2, k))]
    schedule = ems + dups
    rng.shuffle(schedule)
    seen: set[bytes] = set()
    for em in schedule:
        ident = em.identifier.digest
        if ident in seen:
            t.attack(em.envelope, em.opening)
        else:
            seen.add(ident)
            t.honest(em)
    t.summary.distinct_honest += len(ems)


def _substituter(t: _Trial) -> None:
    sim, rng = t.sim, t.rng
    relation = rng.choice([HASH_PREIMAGE, INBOX_INJECTION])
    target = t.final_emit(relation)
    donor = t.final_emit(rng.choice([HASH_PREIMAGE, INBOX_INJECTION]))
    mutator = rng.choice(SUBSTITUTION_MUTATORS)
    mutated = apply_mutator(sim, target, mutator, donor if rng.random() < 0.7 else None, rng)
    assert (mutated.pcm.m, mutated.pcm.commitment, mutated.pcm.identifier) == (
        target.pcm.m,
        target.pcm.commitment,
        target.pcm.identifier,
    )
    # the adversary may present the honest opening or one it can actually open (the donor's)
    opening = target.opening if rng.random() < 0.5 else donor.opening
    t.attack(mutated, opening)
    if rng.random() < 0.5:
        t.honest(target)
        t.summary.distinct_honest += 1


def _prefinality_forker(t: _Trial) -> None:
    sim, rng = t.sim, t.rng
    sim.advance(t.domain, rng.randint(1, 3))
    em = sim.emit(t.name(), t.domain, "pcim", HASH_PREIMAGE, BackendKind.TRANSPARENT_REEXEC, t.set_id)
    tag = em.pcim.finality_tag
    variant = rng.randrange(3)
    if variant == 0:
        # observation above the watermark
        t.attack(em.envelope, em.opening)
        return
    if variant == 1:
        # tagged block is abandoned, then the new branch is finalized past it
        chain = sim.chains[t.domain]
        extra = rng.randint(0, 2)
        if extra:
            chain = sim.advance(t.domain, extra)
        depth = chain.tip_height - tag.height + 1
        chain = sim.reorg(t.domain, depth)
        sim.finalize(t.domain)
        t.attack(em.envelope, em.opening)
        return
    # a partially finalized chain: watermark still below the tag
    chain = sim.advance(t.domain, rng.randint(1, 3))
    sim.finalize(t.domain, tag.height - 1)
    t.attack(em.envelope, em.opening)
    # control: once honestly final the same message must go through
    sim.finalize(t.domain)
    t.honest(em)
    t.summary.distinct_honest += 1


def _origin_forger(t: _Trial, template: PCIM) -> None:
    sim, rng = t.sim, t.rng
    gs = sim.guardian_sets[t.set_id]
    keys = sim.guardian_keys[t.set_id]
    held = rng.sample(sorted(keys), gs.threshold - 1)

    # a message no guardian quorum ever saw
    chain = sim.chains[t.domain]
    seq = 2**40 + rng.getrandbits(32)
    witness = rng.randbytes(24)
    pv = ParamBundle.of(("h", tagged_hash("commit", witness)))
    vk = sim.vks[(BackendKind.TRANSPARENT_REEXEC, HASH_PREIMAGE)]
    m = Message(t.domain, sim.sender_of(t.domain), sim.scenario.dest_domain, HASH_PREIMAGE, ParamBundle.of(seq_entry(seq)))
    pcm, opening = build_pcm(m, pv, rng.randbytes(32), prove_reexec(witness), vk, sim.state.current_root, sim.state.current_root)
    tag = chain.tag_at(chain.finalized_height)
    digest = tagged_hash("attest", covered_bytes(pcm, tag))

    strategy = rng.randrange(5)
    sigs: dict[int, bytes] = {i: keys[i].sign(digest) for i in held}
    free = [i for i in range(len(gs.members)) if i not in sigs]
    if strategy == 1:
        # pad the quorum with keys that are not members
        for i in rng.sample(free, min(len(free), rng.randint(1, len(free)))):
            sigs[i] = derive_signing_key(rng.randbytes(32)).sign(digest)
    elif strategy == 2:
        # pad with stolen member signatures over a different message
        for i, s in template.attestation.signatures:
            if i not in sigs:
                sigs[i] = s
    elif strategy == 3:
        # replay a whole valid quorum attestation from another message
        attestation = template.attestation
        t.attack(PCIM(pcm, tag, attestation), opening)
        return
    elif strategy == 4 and held:
        # duplicate indices to inflate the count
        ordered = sorted(sigs.items())
        dup = ordered + [ordered[0]]
        attestation = Attestation(t.set_id, tuple(sorted(dup)), digest)
        t.attack(PCIM(pcm, tag, attestation), opening)
        return
    attestation = Attestation(t.set_id, tuple(sorted(sigs.items())), digest)
    t.attack(PCIM(pcm, tag, attestation), opening)


def _reorderer(t: _Trial) -> None:
    sim, rng = t.sim, t.rng
    k = rng.randint(2, 5)
    ems = []
    for _ in range(k):
        ems.append(sim.emit(t.name(), t.domain, "pcm", MERKLE_TRANSITION, BackendKind.TRANSPARENT_REEXEC, None, rng.randint(1, 3)))
    order = list(ems)
    while order == ems:
        rng.shuffle(order)
    dups = [rng.choice(ems) for _ in range(rng.randint(1, k))]
    schedule = order + dups
    rng.shuffle(schedule)
    accepted: set[bytes] = set()
    expected_next = 0
    for em in schedule:
        in_order = expected_next < k and em is ems[expected_next]
        if in_order:
            reason = t.honest(em)
        else:
            reason = t.attack(em.envelope, em.opening)
        if reason is Reason.OK:
            accepted.add(em.identifier.digest)
            while expected_next < k and ems[expected_next].identifier.digest in accepted:
                expected_next += 1
    # honest retry in emission order
    for em in ems:
        if em.identifier.digest not in accepted:
            if t.honest(em) is Reason.OK:
                accepted.add(em.identifier.digest)
    t.summary.distinct_honest += k


ADVERSARIES = {
    "replayer": _replayer,
    "substituter": _substituter,
    "prefinality_forker": _prefinality_forker,
    "origin_forger": _origin_forger,
    "reorderer": _reorderer,
}


def run_adversary_suite(base: Scenario, kind: str, trials: int, seed: int | None = None) -> AdversarySummary:
    """Run ``trials`` randomized attacks of one family against a fresh simulation of ``base``."""
    if kind not in ADVERSARY_KINDS:
        raise ScenarioInvalid(f"unknown adversary kind {kind!r}", field="kind")
    if trials < 1:
        raise ScenarioInvalid("trials must be >= 1", field="trials")
    sim = Simulation(_suite_scenario(base, kind), seed)
    summary = AdversarySummary(kind, trials)
    rng = sim.rng("adversary", kind)
    trial = _Trial(sim, summary, rng)
    template = None
    if kind == "origin_forger":
        template = trial.final_emit(HASH_PREIMAGE, "pcim", BackendKind.TRANSPARENT_REEXEC).pcim
    for _ in range(trials):
        if kind == "origin_forger":
            _origin_forger(trial, template)
        else:
            ADVERSARIES[kind](trial)
    summary.missed = len(sim.violations)
    summary.accepted_ids = list(sim.accepted)
    summary.matrix = sim.matrix
    return summary
