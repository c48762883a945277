"""Scenario files: a line-oriented plain-text grammar.

::

    pcimkit-scenario v1
    name = replay_basic
    seed = 7
    quadrant = offchain_scalability      # one of QUADRANTS
    tree_depth = 4                       # default 8
    dest_domain = 100                    # receiving portal's domain id
    vks = transparent:1, receipt:2       # backend:relation pairs, default all
    adversaries = replayer, substituter  # run by ``suite``
    adversary_trials = 20

    [domain 1]
    finality_lag = 2          # auto-finalize tip - lag after each advance; "none" = manual
    reorg_probability = 0.1   # chance of a random reorg on each advance
    reorg_max_depth = 2

    [guardians 1]
    size = 3                  # deterministic keys derived from the seed
    threshold = 2             # default floor(2n/3)+1
    # members = <hex>, <hex>  # explicit verify-only keys instead of size

    events:
    emit m1 domain=1 kind=pcim relation=2 backend=transparent guardians=1
    finalize domain=1
    deliver m1 expect=OK
    deliver m1 expect=ReplayDetected

Blank lines and ``#`` comments are ignored everywhere. Event lines are a verb,
an optional message name, then ``key=value`` arguments; ``expect=`` records an
expected outcome for that event.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from pathlib import Path

from ..attestation import MAX_MEMBERS, PUBLIC_KEY_SIZE
from ..errors import ScenarioInvalid
from ..portal import Reason
from ..relations import CONSUMPTION_RECEIPT, HASH_PREIMAGE, INBOX_INJECTION, MERKLE_TRANSITION
from ..router import BackendKind

HEADER = "pcimkit-scenario v1"

QUADRANTS = ("onchain_scalability", "onchain_privacy", "offchain_scalability", "offchain_privacy")
ADVERSARY_KINDS = ("replayer", "substituter", "prefinality_forker", "origin_forger", "reorderer")

MUTATORS = (
    "identity",
    "swap_public_values",
    "flip_public_value",
    "swap_proof",
    "flip_proof",
    "swap_statement",
    "swap_roots",
    "swap_vk",
    "corrupt_identifier",
    "forge_origin",
    "drop_signatures",
)

INBOX_OUTCOMES = ("OK", "WrongSecret", "AlreadyConsumed", "NotFound")

# verb -> (needs a message name, allowed argument keys)
EVENT_ARGS = {
    "emit": (True, {"domain", "kind", "relation", "backend", "guardians", "updates", "tag"}),
    "send": (True, {"domain", "kind", "relation", "backend", "guardians", "updates", "tag", "expect"}),
    "deliver": (True, {"expect"}),
    "relay": (True, {"mutator", "donor", "expect"}),
    "advance": (False, {"domain", "n"}),
    "reorg": (False, {"domain", "depth"}),
    "finalize": (False, {"domain", "height"}),
    "consume": (True, {"secret", "expect"}),
    "export": (True, {"expect"}),
}

ALL_VKS = tuple(
    (kind, rel)
    for rel in (MERKLE_TRANSITION, HASH_PREIMAGE, INBOX_INJECTION, CONSUMPTION_RECEIPT)
    for kind in (BackendKind.TRANSPARENT_REEXEC, BackendKind.SIGNATURE_RECEIPT)
)


@dataclass(frozen=True)
class DomainConfig:
    domain_id: int
    finality_lag: int | None = None
    reorg_probability: float = 0.0
    reorg_max_depth: int = 0


@dataclass(frozen=True)
class GuardianConfig:
    set_id: int
    size: int | None = None
    threshold: int | None = None
    members: tuple[bytes, ...] = ()


@dataclass(frozen=True)
class Event:
    index: int
    verb: str
    name: str | None = None
    args: tuple[tuple[str, str], ...] = ()
    line: int | None = None

    def arg(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.args:
            if k == key:
                return v
        return default

    def int_arg(self, key: str, default: int | None = None) -> int | None:
        raw = self.arg(key)
        if raw is None:
            return default
        try:
            return int(raw, 0)
        except ValueError:
            raise ScenarioInvalid(f"{raw!r} is not an integer", self.line, key) from None

    @property
    def expect(self) -> str | None:
        return self.arg("expect")

    def text(self) -> str:
        parts = [self.verb] + ([self.name] if self.name else []) + [f"{k}={v}" for k, v in self.args]
        return " ".join(parts)


@dataclass(frozen=True)
class Scenario:
    name: str = "unnamed"
    seed: int = 0
    quadrant: str = "offchain_privacy"
    tree_depth: int = 8
    dest_domain: int = 100
    domains: tuple[DomainConfig, ...] = ()
    guardian_sets: tuple[GuardianConfig, ...] = ()
    vks: tuple[tuple[BackendKind, int], ...] = ALL_VKS
    events: tuple[Event, ...] = ()
    adversaries: tuple[str, ...] = ()
    adversary_trials: int = 10

    @property
    def expected_outcomes(self) -> list[tuple[int, str]]:
        return [(e.index, e.expect) for e in self.events if e.expect is not None]

    def domain(self, domain_id: int) -> DomainConfig | None:
        return next((d for d in self.domains if d.domain_id == domain_id), None)

    def guardian_set(self, set_id: int) -> GuardianConfig | None:
        return next((g for g in self.guardian_sets if g.set_id == set_id), None)

    def with_events(self, events) -> Scenario:
        return replace(self, events=tuple(replace(e, index=i) for i, e in enumerate(events)))


def _int(value: str, line: int, key: str, lo: int = 0, hi: int = 2**64 - 1) -> int:
    try:
        n = int(value, 0)
    except ValueError:
        raise ScenarioInvalid(f"{value!r} is not an integer", line, key) from None
    if not lo <= n <= hi:
        raise ScenarioInvalid(f"{n} outside {lo}..{hi}", line, key)
    return n


def _split_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _parse_vks(value: str, line: int) -> tuple[tuple[BackendKind, int], ...]:
    out = []
    for item in _split_list(value):
        kind, sep, rel = item.partition(":")
        if not sep:
            raise ScenarioInvalid(f"vk entry {item!r} must be backend:relation", line, "vks")
        try:
            out.append((BackendKind.parse(kind), _int(rel, line, "vks", 1, 2**32 - 1)))
        except ValueError as exc:
            raise ScenarioInvalid(str(exc), line, "vks") from None
    return tuple(out)


def _parse_event(text: str, index: int, line: int) -> Event:
    tokens = text.split()
    verb = tokens[0]
    if verb not in EVENT_ARGS:
        raise ScenarioInvalid(f"unknown event {verb!r}", line, "events")
    needs_name, allowed = EVENT_ARGS[verb]
    rest = tokens[1:]
    name = None
    if needs_name:
        if not rest or "=" in rest[0]:
            raise ScenarioInvalid(f"{verb} needs a message name", line, "events")
        name, rest = rest[0], rest[1:]
    args = []
    for token in rest:
        key, sep, value = token.partition("=")
        if not sep or not value:
            raise ScenarioInvalid(f"expected key=value, got {token!r}", line, "events")
        if key not in allowed:
            raise ScenarioInvalid(f"{verb} does not take {key!r}", line, key)
        args.append((key, value))
    return Event(index, verb, name, tuple(args), line)


def parse_scenario(text: str) -> Scenario:
    lines = text.splitlines()
    first = next((i for i, raw in enumerate(lines) if raw.split("#", 1)[0].strip()), None)
    if first is None or lines[first].strip() != HEADER:
        raise ScenarioInvalid(f"first line must be {HEADER!r}", (first or 0) + 1, "header")

    top: dict[str, str] = {}
    top_lines: dict[str, int] = {}
    domains: dict[int, dict] = {}
    guardians: dict[int, dict] = {}
    events: list[Event] = []
    section: tuple[str, int] | None = None
    in_events = False

    for n, raw in enumerate(lines[first + 1 :], start=first + 2):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        if in_events:
            events.append(_parse_event(content, len(events), n))
            continue
        if content == "events:":
            in_events = True
            continue
        if content.startswith("[") and content.endswith("]"):
            parts = content[1:-1].split()
            if len(parts) != 2 or parts[0] not in ("domain", "guardians"):
                raise ScenarioInvalid(f"bad section header {content!r}", n, "section")
            ident = _int(parts[1], n, parts[0], 0, 2**32 - 1)
            table = domains if parts[0] == "domain" else guardians
            if ident in table:
                raise ScenarioInvalid(f"duplicate section {content!r}", n, "section")
            table[ident] = {"_line": n}
            section = (parts[0], ident)
            continue
        key, sep, value = content.partition("=")
        if not sep:
            raise ScenarioInvalid(f"expected 'key = value', got {content!r}", n)
        key, value = key.strip(), value.strip()
        if section is None:
            top[key] = value
            top_lines[key] = n
        else:
            target = domains if section[0] == "domain" else guardians
            target[section[1]][key] = (value, n)

    return _build(top, top_lines, domains, guardians, events)


def _build(top, top_lines, domains, guardians, events) -> Scenario:
    known_top = {"name", "seed", "quadrant", "tree_depth", "dest_domain", "vks", "adversaries", "adversary_trials"}
    for key in top:
        if key not in known_top:
            raise ScenarioInvalid(f"unknown key {key!r}", top_lines[key], key)
    kw: dict = {}
    if "name" in top:
        kw["name"] = top["name"]
    if "seed" in top:
        kw["seed"] = _int(top["seed"], top_lines["seed"], "seed")
    if "quadrant" in top:
        if top["quadrant"] not in QUADRANTS:
            raise ScenarioInvalid(f"quadrant must be one of {', '.join(QUADRANTS)}", top_lines["quadrant"], "quadrant")
        kw["quadrant"] = top["quadrant"]
    if "tree_depth" in top:
        kw["tree_depth"] = _int(top["tree_depth"], top_lines["tree_depth"], "tree_depth", 1, 16)
    if "dest_domain" in top:
        kw["dest_domain"] = _int(top["dest_domain"], top_lines["dest_domain"], "dest_domain", 0, 2**32 - 1)
    if "vks" in top:
        kw["vks"] = _parse_vks(top["vks"], top_lines["vks"])
    if "adversaries" in top:
        kinds = tuple(_split_list(top["adversaries"]))
        for kind in kinds:
            if kind not in ADVERSARY_KINDS:
                raise ScenarioInvalid(f"unknown adversary {kind!r}", top_lines["adversaries"], "adversaries")
        kw["adversaries"] = kinds
    if "adversary_trials" in top:
        kw["adversary_trials"] = _int(top["adversary_trials"], top_lines["adversary_trials"], "adversary_trials", 1)

    domain_cfgs = []
    for ident, raw in sorted(domains.items()):
        opts = {}
        for key, (value, n) in ((k, v) for k, v in raw.items() if k != "_line"):
            if key == "finality_lag":
                opts[key] = None if value == "none" else _int(value, n, key)
            elif key == "reorg_probability":
                try:
                    p = float(value)
                except ValueError:
                    raise ScenarioInvalid(f"{value!r} is not a number", n, key) from None
                if not 0.0 <= p <= 1.0:
                    raise ScenarioInvalid("probability outside [0, 1]", n, key)
                opts[key] = p
            elif key == "reorg_max_depth":
                opts[key] = _int(value, n, key, 0, 1000)
            else:
                raise ScenarioInvalid(f"unknown domain key {key!r}", n, key)
        domain_cfgs.append(DomainConfig(ident, **opts))

    guardian_cfgs = []
    for ident, raw in sorted(guardians.items()):
        opts = {}
        for key, (value, n) in ((k, v) for k, v in raw.items() if k != "_line"):
            if key == "size":
                opts[key] = _int(value, n, key, 1, MAX_MEMBERS)
            elif key == "threshold":
                opts[key] = _int(value, n, key, 1, MAX_MEMBERS)
            elif key == "members":
                try:
                    members = tuple(bytes.fromhex(h) for h in _split_list(value))
                except ValueError:
                    raise ScenarioInvalid("members must be hex-encoded keys", n, key) from None
                if any(len(m) != PUBLIC_KEY_SIZE for m in members):
                    raise ScenarioInvalid("members are 32-octet public keys", n, key)
                opts[key] = members
            else:
                raise ScenarioInvalid(f"unknown guardians key {key!r}", n, key)
        cfg = GuardianConfig(ident, **opts)
        count = cfg.size if cfg.size is not None else len(cfg.members)
        if (cfg.size is None) == (not cfg.members):
            raise ScenarioInvalid("guardians need exactly one of size or members", raw["_line"], "size")
        if cfg.threshold is not None and cfg.threshold > count:
            raise ScenarioInvalid("threshold exceeds member count", raw["_line"], "threshold")
        if cfg.members and len(set(cfg.members)) != len(cfg.members):
            raise ScenarioInvalid("member keys must be distinct", raw["_line"], "members")
        guardian_cfgs.append(cfg)

    scenario = Scenario(domains=tuple(domain_cfgs), guardian_sets=tuple(guardian_cfgs), events=tuple(events), **kw)
    validate(scenario)
    return scenario


def validate(s: Scenario) -> None:
    """Reference checks: domains, guardian sets, relations, names and expectations."""
    if any(d.domain_id == s.dest_domain for d in s.domains):
        raise ScenarioInvalid("a sender domain may not equal dest_domain", None, "dest_domain")
    emitted: dict[str, Event] = {}
    for e in s.events:
        if e.verb in ("emit", "send"):
            if e.name in emitted:
                raise ScenarioInvalid(f"message {e.name!r} emitted twice", e.line, "name")
            d = e.int_arg("domain")
            if d is None or s.domain(d) is None:
                raise ScenarioInvalid("emit needs a declared domain", e.line, "domain")
            kind = e.arg("kind", "pcim")
            if kind not in ("pcm", "pcim"):
                raise ScenarioInvalid("kind must be pcm or pcim", e.line, "kind")
            rel = e.int_arg("relation", HASH_PREIMAGE)
            if rel not in (MERKLE_TRANSITION, HASH_PREIMAGE, INBOX_INJECTION):
                raise ScenarioInvalid("emit supports relations 1, 2 and 3", e.line, "relation")
            try:
                backend = BackendKind.parse(e.arg("backend", "transparent"))
            except ValueError as exc:
                raise ScenarioInvalid(str(exc), e.line, "backend") from None
            if (backend, rel) not in s.vks:
                raise ScenarioInvalid(f"no {backend.label} vk declared for relation {rel}", e.line, "backend")
            if kind == "pcim":
                g = e.int_arg("guardians")
                if g is None or s.guardian_set(g) is None:
                    raise ScenarioInvalid("pcim needs a declared guardian set", e.line, "guardians")
            updates = e.int_arg("updates", 1)
            if not 1 <= updates <= 64:
                raise ScenarioInvalid("updates must be in 1..64", e.line, "updates")
            if e.arg("tag", "tip") not in ("tip", "finalized"):
                raise ScenarioInvalid("tag must be tip or finalized", e.line, "tag")
            emitted[e.name] = e
        elif e.verb in ("deliver", "relay", "consume", "export"):
            if e.name not in emitted:
                raise ScenarioInvalid(f"message {e.name!r} used before emit", e.line, "name")
            if e.verb == "relay":
                if e.arg("mutator") not in MUTATORS:
                    raise ScenarioInvalid(f"mutator must be one of {', '.join(MUTATORS)}", e.line, "mutator")
                donor = e.arg("donor")
                if donor is not None and donor not in emitted:
                    raise ScenarioInvalid(f"donor {donor!r} used before emit", e.line, "donor")
            if e.verb in ("consume", "export") and emitted[e.name].int_arg("relation", HASH_PREIMAGE) != INBOX_INJECTION:
                raise ScenarioInvalid(f"{e.verb} needs an inbox-injection message", e.line, "name")
            if e.verb == "consume" and e.arg("secret", "right") not in ("right", "wrong"):
                raise ScenarioInvalid("secret must be right or wrong", e.line, "secret")
            if e.verb == "export" and (BackendKind.SIGNATURE_RECEIPT, CONSUMPTION_RECEIPT) not in s.vks:
                raise ScenarioInvalid("export needs a receipt vk for relation 4", e.line, "name")
        else:
            d = e.int_arg("domain")
            if d is None or s.domain(d) is None:
                raise ScenarioInvalid(f"{e.verb} needs a declared domain", e.line, "domain")
            for key in ("n", "depth", "height"):
                v = e.int_arg(key)
                if v is not None and v < 0:
                    raise ScenarioInvalid("must be non-negative", e.line, key)
        if e.expect is not None:
            allowed = INBOX_OUTCOMES if e.verb == "consume" else tuple(r.value for r in Reason)
            if e.verb not in ("send", "deliver", "relay", "consume", "export"):
                raise ScenarioInvalid(f"{e.verb} has no outcome to expect", e.line, "expect")
            if e.expect not in allowed:
                raise ScenarioInvalid(f"expect must be one of {', '.join(allowed)}", e.line, "expect")


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioInvalid(f"cannot read {path}: {exc.strerror}") from None
    return parse_scenario(text)


def format_scenario(s: Scenario) -> str:
    """Render ``s`` back into the file grammar (round-trips through :func:`parse_scenario`)."""
    out = [HEADER, f"name = {s.name}", f"seed = {s.seed}", f"quadrant = {s.quadrant}"]
    out.append(f"tree_depth = {s.tree_depth}")
    out.append(f"dest_domain = {s.dest_domain}")
    out.append("vks = " + ", ".join(f"{k.label}:{r}" for k, r in s.vks))
    if s.adversaries:
        out.append("adversaries = " + ", ".join(s.adversaries))
    out.append(f"adversary_trials = {s.adversary_trials}")
    for d in s.domains:
        out += ["", f"[domain {d.domain_id}]"]
        out.append(f"finality_lag = {'none' if d.finality_lag is None else d.finality_lag}")
        out.append(f"reorg_probability = {d.reorg_probability!r}")
        out.append(f"reorg_max_depth = {d.reorg_max_depth}")
    for g in s.guardian_sets:
        out += ["", f"[guardians {g.set_id}]"]
        if g.members:
            out.append("members = " + ", ".join(m.hex() for m in g.members))
        else:
            out.append(f"size = {g.size}")
        if g.threshold is not None:
            out.append(f"threshold = {g.threshold}")
    out += ["", "events:"]
    out += [e.text() for e in s.events]
    return "\n".join(out) + "\n"


def _prefixed(e: Event, prefix: str) -> Event:
    args = tuple((k, prefix + v if k == "donor" else v) for k, v in e.args)
    return replace(e, name=None if e.name is None else prefix + e.name, args=args)


def merge_scenarios(a: Scenario, b: Scenario, rng: random.Random, prefixes=("a.", "b.")) -> Scenario:
    """Random interleaving of two scenarios over disjoint domains and guardian sets.

    Each scenario's own event order is preserved; message names are prefixed.
    """
    if {d.domain_id for d in a.domains} & {d.domain_id for d in b.domains}:
        raise ScenarioInvalid("merged scenarios must use disjoint domains")
    if {g.set_id for g in a.guardian_sets} & {g.set_id for g in b.guardian_sets}:
        raise ScenarioInvalid("merged scenarios must use disjoint guardian sets")
    if (a.dest_domain, a.tree_depth) != (b.dest_domain, b.tree_depth):
        raise ScenarioInvalid("merged scenarios must share dest_domain and tree_depth")
    left = [_prefixed(e, prefixes[0]) for e in a.events]
    right = [_prefixed(e, prefixes[1]) for e in b.events]
    slots = [0] * len(left) + [1] * len(right)
    rng.shuffle(slots)
    queues = [iter(left), iter(right)]
    merged = [next(queues[s]) for s in slots]
    vks = tuple(dict.fromkeys(a.vks + b.vks))
    return Scenario(
        name=f"{a.name}+{b.name}",
        seed=a.seed,
        quadrant=a.quadrant,
        tree_depth=a.tree_depth,
        dest_domain=a.dest_domain,
        domains=a.domains + b.domains,
        guardian_sets=a.guardian_sets + b.guardian_sets,
        vks=vks,
    ).with_events(merged)
