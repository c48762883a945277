"""Invariant allocation matrix and its text / structured renderings."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..portal import Reason

INVARIANTS = (
    ("origin_authenticity", "attestation"),
    ("replay_safety", "portal"),
    ("finality_alignment", "finality"),
    ("parameter_binding", "crypto_core+portal"),
    ("private_consumption", "inbox"),
)
MODULE_OF = dict(INVARIANTS)

# acceptance checks in evaluation order, with the invariant row each one serves
PCIM_CHECKS = (
    ("origin", "origin_authenticity"),
    ("finality", "finality_alignment"),
    ("structure", "replay_safety"),
    ("replay", "replay_safety"),
    ("binding", "parameter_binding"),
    ("proof", "parameter_binding"),
    ("root", "finality_alignment"),
)
PCM_CHECKS = PCIM_CHECKS[2:]

FAILED_CHECK = {
    Reason.ORIGIN_INVALID: "origin",
    Reason.NOT_FINAL: "finality",
    Reason.MALFORMED_MESSAGE: "structure",
    Reason.REPLAY_DETECTED: "replay",
    Reason.BINDING_MISMATCH: "binding",
    Reason.PROOF_INVALID: "proof",
    Reason.ROOT_MISMATCH: "root",
}

# invariant rows a quadrant is expected to exercise
QUADRANT_ROWS = {
    "onchain_scalability": ("replay_safety", "parameter_binding"),
    "onchain_privacy": ("replay_safety", "parameter_binding", "private_consumption"),
    "offchain_scalability": ("origin_authenticity", "replay_safety", "finality_alignment", "parameter_binding"),
    "offchain_privacy": tuple(name for name, _ in INVARIANTS),
}


@dataclass
class Cell:
    exercised: int = 0
    caught: int = 0
    missed: int = 0


@dataclass
class AllocationMatrix:
    cells: dict[str, Cell] = field(default_factory=lambda: {name: Cell() for name, _ in INVARIANTS})

    def record_acceptance(self, reason: Reason, interchain: bool) -> None:
        """Credit every check that ran for one delivery attempt."""
        failed = FAILED_CHECK.get(reason)
        for check, row in PCIM_CHECKS if interchain else PCM_CHECKS:
            self.cells[row].exercised += 1
            if check == failed:
                self.cells[row].caught += 1
                break

    def record_consumption(self, caught: bool) -> None:
        cell = self.cells["private_consumption"]
        cell.exercised += 1
        if caught:
            cell.caught += 1

    def record_missed(self, invariant: str) -> None:
        self.cells[invariant].missed += 1

    @property
    def missed(self) -> int:
        return sum(c.missed for c in self.cells.values())

    def coverage_gaps(self, quadrant: str) -> list[str]:
        return [row for row in QUADRANT_ROWS.get(quadrant, ()) if self.cells[row].exercised == 0]

    def merge(self, other: AllocationMatrix) -> None:
        for name, cell in other.cells.items():
            mine = self.cells[name]
            mine.exercised += cell.exercised
            mine.caught += cell.caught
            mine.missed += cell.missed


def emit_allocation_report(matrix: AllocationMatrix, fmt: str = "text") -> str:
    rows = [(name, module, matrix.cells[name]) for name, module in INVARIANTS]
    if fmt == "structured":
        return "".join(f"{n} {m} {c.exercised} {c.caught} {c.missed}\n" for n, m, c in rows)
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    header = ("invariant", "enforced by", "exercised", "caught", "missed")
    body = [(n, m, str(c.exercised), str(c.caught), str(c.missed)) for n, m, c in rows]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(5)]

    def fmt_row(r):
        return "  ".join(r[i].ljust(widths[i]) if i < 2 else r[i].rjust(widths[i]) for i in range(5)).rstrip()

    lines = [fmt_row(header), "  ".join("-" * w for w in widths)]
    lines += [fmt_row(r) for r in body]
    return "\n".join(lines) + "\n"
