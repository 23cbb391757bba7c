"""Messages exchanged between simulated validators."""

from __future__ import annotations

from dataclasses import dataclass

from pote.chain import Block, ChainState
from pote.validation import FinalityCertificate, ReAttestation


@dataclass(frozen=True)
class Proposal:
    height: int
    attempt: int
    block: Block
    # Shipped so receivers can take the adopt-commitment path.
    post_state: ChainState


@dataclass(frozen=True)
class Attest:
    height: int
    attempt: int
    att: ReAttestation


@dataclass(frozen=True)
class Vote:
    """Committee vote used only by the slotted baseline."""

    height: int
    attempt: int
    commitment: bytes


@dataclass(frozen=True)
class TimeoutNotice:
    height: int
    attempt: int


@dataclass(frozen=True)
class Sync:
    """A finalized block with its certificate, sent to a node that timed out."""

    height: int
    attempt: int
    block: Block
    certificate: FinalityCertificate
    post_state: ChainState


Message = Proposal | Attest | Vote | TimeoutNotice | Sync
