"""Canonical encoding, domain-separated hashing, identifiers and commitments.

Wire rules for the canonical encoding:

* every top-level value starts with a one-octet type tag;
* integers are fixed-width little-endian (u8, u32, u64);
* octet strings and UTF-8 strings carry a 4-octet little-endian length;
* lists carry a 4-octet little-endian element count;
* 32-octet digests are written raw, without a length prefix;
* nested records are written field by field without their own tag.

The hash function is SHA-256. A tagged hash covers
``u32le(len(tag)) || tag || payload``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Any, ClassVar, Iterable

from .errors import DecodingError, EncodingOverflow, UnknownDomainTag

DIGEST_SIZE = 32
NONCE_SIZE = 32
MAX_LENGTH = 2**32 - 1
MAX_LABEL = 255

DOMAIN_TAGS = frozenset({"ident", "commit", "nullifier", "attest", "vkid", "root"})

CanonicalBytes = bytes

_TYPE_REGISTRY: dict[int, type] = {}

_INT_FORMATS = {"u8": ("<B", 1, 2**8), "u32": ("<I", 4, 2**32), "u64": ("<Q", 8, 2**64)}


def encodable(type_tag: int):
    """Class decorator registering a record type for the canonical encoding.

    The class must define a ``_schema`` tuple of ``(attribute, kind)`` pairs.
    """

    def register(cls):
        if type_tag in _TYPE_REGISTRY and _TYPE_REGISTRY[type_tag] is not cls:
            raise ValueError(f"type tag 0x{type_tag:02x} already used by {_TYPE_REGISTRY[type_tag].__name__}")
        if not 0 <= type_tag < 256:
            raise ValueError("type tag must fit in one octet")
        cls._type_tag = type_tag
        _TYPE_REGISTRY[type_tag] = cls
        return cls

    return register


class _Writer:
    def __init__(self) -> None:
        self.parts: list[bytes] = []

    def length(self, n: int) -> None:
        if n > MAX_LENGTH:
            raise EncodingOverflow(f"length {n} exceeds 2^32 - 1")
        self.parts.append(struct.pack("<I", n))

    def value(self, kind: Any, value: Any) -> None:
        if isinstance(kind, str):
            if kind in _INT_FORMATS:
                fmt, _, bound = _INT_FORMATS[kind]
                if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value < bound:
                    raise ValueError(f"{value!r} is not a valid {kind}")
                self.parts.append(struct.pack(fmt, value))
            elif kind == "bytes":
                data = bytes(value)
                self.length(len(data))
                self.parts.append(data)
            elif kind == "str":
                data = value.encode("utf-8")
                self.length(len(data))
                self.parts.append(data)
            elif kind == "b32":
                data = bytes(value)
                if len(data) != DIGEST_SIZE:
                    raise ValueError(f"expected {DIGEST_SIZE} octets, got {len(data)}")
                self.parts.append(data)
            else:
                raise TypeError(f"unknown kind {kind!r}")
        elif isinstance(kind, tuple) and kind[0] == "list":
            self.length(len(value))
            for item in value:
                self.value(kind[1], item)
        elif isinstance(kind, tuple) and kind[0] == "tuple":
            if len(value) != len(kind) - 1:
                raise ValueError("tuple arity mismatch")
            for sub, item in zip(kind[1:], value):
                self.value(sub, item)
        elif isinstance(kind, type) and hasattr(kind, "_schema"):
            if not isinstance(value, kind):
                raise TypeError(f"expected {kind.__name__}, got {type(value).__name__}")
            self.record(value)
        else:
            raise TypeError(f"unknown kind {kind!r}")

    def record(self, obj: Any) -> None:
        for attr, kind in obj._schema:
            self.value(kind, getattr(obj, attr))


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodingError("truncated input")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def length(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def value(self, kind: Any) -> Any:
        if isinstance(kind, str):
            if kind in _INT_FORMATS:
                fmt, size, _ = _INT_FORMATS[kind]
                return struct.unpack(fmt, self.take(size))[0]
            if kind == "bytes":
                return self.take(self.length())
            if kind == "str":
                try:
                    return self.take(self.length()).decode("utf-8")
                except UnicodeDecodeError as exc:
                    raise DecodingError("invalid UTF-8 label") from exc
            if kind == "b32":
                return self.take(DIGEST_SIZE)
        elif isinstance(kind, tuple) and kind[0] == "list":
            count = self.length()
            if count > len(self.data) - self.pos:
                # every element occupies at least one octet
                raise DecodingError("element count exceeds remaining input")
            return tuple(self.value(kind[1]) for _ in range(count))
        elif isinstance(kind, tuple) and kind[0] == "tuple":
            return tuple(self.value(sub) for sub in kind[1:])
        elif isinstance(kind, type) and hasattr(kind, "_schema"):
            return self.record(kind)
        raise TypeError(f"unknown kind {kind!r}")

    def record(self, cls: type) -> Any:
        values = {attr: self.value(kind) for attr, kind in cls._schema}
        try:
            return cls(**values)
        except (ValueError, TypeError) as exc:
            raise DecodingError(f"invalid {cls.__name__}: {exc}") from exc


def encode(value: Any) -> CanonicalBytes:
    """Canonical, injective encoding of a registered domain value."""
    tag = getattr(type(value), "_type_tag", None)
    if tag is None:
        raise TypeError(f"{type(value).__name__} is not a canonical-encodable type")
    w = _Writer()
    w.parts.append(bytes([tag]))
    w.record(value)
    return b"".join(w.parts)


def decode(data: bytes) -> Any:
    """Inverse of :func:`encode`; rejects trailing garbage."""
    if not data:
        raise DecodingError("empty input")
    cls = _TYPE_REGISTRY.get(data[0])
    if cls is None:
        raise DecodingError(f"unknown type tag 0x{data[0]:02x}")
    r = _Reader(bytes(data))
    r.pos = 1
    value = r.record(cls)
    if r.pos != len(r.data):
        raise DecodingError("trailing octets after value")
    return value


def tagged_hash(domain_tag: str, payload: bytes) -> bytes:
    """SHA-256 over the length-prefixed domain tag followed by ``payload``."""
    if domain_tag not in DOMAIN_TAGS:
        raise UnknownDomainTag(domain_tag)
    tag = domain_tag.encode("ascii")
    h = hashlib.sha256()
    h.update(struct.pack("<I", len(tag)))
    h.update(tag)
    h.update(payload)
    return h.digest()


class DigestValue:
    digest: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.digest, bytes) or len(self.digest) != DIGEST_SIZE:
            raise ValueError(f"{type(self).__name__} needs a {DIGEST_SIZE}-octet digest")

    def hex(self) -> str:
        return self.digest.hex()


@encodable(0x01)
@dataclass(frozen=True)
class ParamBundle:
    """Ordered ``(label, value)`` pairs; labels are unique."""

    entries: tuple[tuple[str, bytes], ...] = ()

    _schema: ClassVar = (("entries", ("list", ("tuple", "str", "bytes"))),)

    def __post_init__(self) -> None:
        entries = tuple((str(label), bytes(value)) for label, value in self.entries)
        seen = set()
        for label, _ in entries:
            if label in seen:
                raise ValueError(f"duplicate label {label!r}")
            if not label or len(label.encode("utf-8")) > MAX_LABEL:
                raise ValueError(f"label {label!r} must be 1..{MAX_LABEL} octets")
            seen.add(label)
        object.__setattr__(self, "entries", entries)

    @classmethod
    def of(cls, *pairs: tuple[str, bytes]) -> ParamBundle:
        return cls(tuple(pairs))

    def get(self, label: str, default: bytes | None = None) -> bytes | None:
        for name, value in self.entries:
            if name == label:
                return value
        return default

    def __getitem__(self, label: str) -> bytes:
        value = self.get(label)
        if value is None:
            raise KeyError(label)
        return value

    def __contains__(self, label: object) -> bool:
        return any(name == label for name, _ in self.entries)

    def labels(self) -> list[str]:
        return [name for name, _ in self.entries]

    def without(self, *labels: str) -> ParamBundle:
        return ParamBundle(tuple(e for e in self.entries if e[0] not in labels))

    def __len__(self) -> int:
        return len(self.entries)


@encodable(0x02)
@dataclass(frozen=True)
class IdentifierSeed:
    domain_id: int
    sender: bytes
    sequence: int

    _schema: ClassVar = (("domain_id", "u32"), ("sender", "bytes"), ("sequence", "u64"))


@encodable(0x03)
@dataclass(frozen=True)
class Identifier(DigestValue):
    digest: bytes
    _schema: ClassVar = (("digest", "b32"),)


@encodable(0x04)
@dataclass(frozen=True)
class Commitment(DigestValue):
    digest: bytes
    _schema: ClassVar = (("digest", "b32"),)


@encodable(0x05)
@dataclass(frozen=True)
class Opening:
    nonce: bytes
    params: ParamBundle

    _schema: ClassVar = (("nonce", "b32"), ("params", ParamBundle))

    def __post_init__(self) -> None:
        if len(self.nonce) != NONCE_SIZE:
            raise ValueError(f"nonce must be {NONCE_SIZE} octets")


def derive_identifier(domain_id: int, sender: bytes, sequence: int) -> Identifier:
    return Identifier(tagged_hash("ident", encode(IdentifierSeed(domain_id, bytes(sender), sequence))))


def commit(params: ParamBundle, nonce: bytes) -> Commitment:
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} octets")
    return Commitment(tagged_hash("commit", bytes(nonce) + encode(params)))


def verify_opening(c: Commitment, o: Opening) -> bool:
    return commit(o.params, o.nonce) == c


def read_golden_vectors(lines: Iterable[str]) -> list[tuple[str, bytes, bytes]]:
    """Parse ``tag hex(payload) hex(digest)`` records; ``-`` stands for an empty payload."""
    out = []
    for raw in lines:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag, payload, digest = line.split()
        out.append((tag, b"" if payload == "-" else bytes.fromhex(payload), bytes.fromhex(digest)))
    return out


def format_golden_vector(tag: str, payload: bytes) -> str:
    return f"{tag} {payload.hex() or '-'} {tagged_hash(tag, payload).hex()}"
