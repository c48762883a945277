"""Proof-carrying messages and interchain messages over a receiving portal.

Submodules: ``crypto_core`` (canonical encoding, commitments, identifiers),
``attestation`` (t-of-n guardian signatures), ``finality`` (simulated chains
with a finality watermark), ``relations`` (verified relations, Merkle state
transitions), ``router`` (vk registry and verifier backends), ``portal``
(the acceptance predicate), ``inbox`` (nullifier-gated private consumption)
and ``harness`` (scenario simulator, adversaries, CLI).
"""

from __future__ import annotations

from .crypto_core import ParamBundle, commit, decode, derive_identifier, encode, tagged_hash, verify_opening
from .errors import PcimError
from .portal import PCIM, PCM, AcceptanceResult, Message, PortalState, Reason, accept_pcim, accept_pcm

__all__ = [
    "AcceptanceResult",
    "Message",
    "ParamBundle",
    "PCIM",
    "PCM",
    "PcimError",
    "PortalState",
    "Reason",
    "accept_pcim",
    "accept_pcm",
    "commit",
    "decode",
    "derive_identifier",
    "encode",
    "tagged_hash",
    "verify_opening",
]

__version__ = "0.1.0"
