"""Block acceptance pipeline and the multi-vendor finality tracker."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from pote import codec, crypto
from pote.attestation import (
    AttestationQuote,
    EnclaveIdentity,
    QuoteUserData,
    VendorAuthority,
    VendorRegistry,
    VerifyOutcome,
    issue_quote,
    verify_quote,
)
from pote.chain import (
    Block,
    ChainState,
    apply_batch,
    block_hash,
    execute_batch,
    genesis_block,
    transactions_root,
)
from pote.codec import DIGEST_SIZE, Reader, Writer
from pote.selection import EnclaveRoster, derive_seed, select_proposer


class Reason(str, Enum):
    MALFORMED = "malformed"
    BAD_PARENT = "bad_parent"
    WRONG_PROPOSER = "wrong_proposer"
    ATTESTATION_INVALID = "attestation_invalid"
    COMMITMENT_MISMATCH = "commitment_mismatch"
    SIGNATURE_INVALID = "signature_invalid"
    FRESHNESS_VIOLATION = "freshness_violation"
    # Raised by re-execution during re-attestation, never by validate_block.
    STATE_MISMATCH = "state_mismatch"


CHECK_ORDER = (
    Reason.MALFORMED,
    Reason.BAD_PARENT,
    Reason.WRONG_PROPOSER,
    Reason.ATTESTATION_INVALID,
    Reason.COMMITMENT_MISMATCH,
    Reason.SIGNATURE_INVALID,
    Reason.FRESHNESS_VIOLATION,
)


@dataclass(frozen=True)
class ValidationVerdict:
    accepted: bool
    reason: Reason | None = None

    def __str__(self) -> str:
        return "accept" if self.accepted else f"reject({self.reason.value})"


ACCEPT = ValidationVerdict(True)


def reject(reason: Reason) -> ValidationVerdict:
    return ValidationVerdict(False, reason)


@dataclass(frozen=True)
class ProposerRef:
    vendor_id: int
    public_key: bytes

    @classmethod
    def of(cls, enclave: EnclaveIdentity) -> "ProposerRef":
        return cls(enclave.vendor_id, enclave.public_key)


@dataclass(frozen=True)
class RoundContext:
    expected_height: int
    chain_id: int
    expected_nonce: bytes
    expected_parent_hash: bytes
    expected_proposer: ProposerRef
    attempt: int = 0

    def to_dict(self) -> dict:
        return {
            "expected_height": self.expected_height,
            "chain_id": self.chain_id,
            "expected_nonce": self.expected_nonce.hex(),
            "expected_parent_hash": self.expected_parent_hash.hex(),
            "expected_proposer": {
                "vendor_id": self.expected_proposer.vendor_id,
                "public_key": self.expected_proposer.public_key.hex(),
            },
            "attempt": self.attempt,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RoundContext":
        prop = doc["expected_proposer"]
        return cls(
            expected_height=int(doc["expected_height"]),
            chain_id=int(doc["chain_id"]),
            expected_nonce=codec.check_digest(bytes.fromhex(doc["expected_nonce"]), "expected_nonce"),
            expected_parent_hash=codec.check_digest(
                bytes.fromhex(doc["expected_parent_hash"]), "expected_parent_hash"
            ),
            expected_proposer=ProposerRef(int(prop["vendor_id"]), bytes.fromhex(prop["public_key"])),
            attempt=int(doc.get("attempt", 0)),
        )


def round_context(
    parent: Block, roster: EnclaveRoster, chain_id: int, attempt: int = 0
) -> RoundContext:
    """Everything an honest node expects of the next block, from public data only."""
    parent_hash = block_hash(parent)
    seed = derive_seed(parent_hash, parent.height + 1, attempt)
    proposer = select_proposer(seed, roster)
    return RoundContext(
        expected_height=parent.height + 1,
        chain_id=chain_id,
        expected_nonce=seed.value,
        expected_parent_hash=parent_hash,
        expected_proposer=ProposerRef.of(proposer),
        attempt=attempt,
    )


def validate_block(
    block: Block | bytes, registry: VendorRegistry, ctx: RoundContext
) -> ValidationVerdict:
    """Run the acceptance checks in fixed order and report the first failure."""
    if isinstance(block, (bytes, bytearray)):
        try:
            block = Block.from_bytes(block)
        except codec.MalformedEncoding:
            return reject(Reason.MALFORMED)
    try:
        quote = block.quote()
    except codec.MalformedEncoding:
        return reject(Reason.MALFORMED)
    h = block.header
    if not h.enclave_signature:
        return reject(Reason.MALFORMED)

    if h.parent_hash != ctx.expected_parent_hash or h.height != ctx.expected_height:
        return reject(Reason.BAD_PARENT)

    expected = ctx.expected_proposer
    if h.proposer_pubkey != expected.public_key or h.tee_vendor_id != expected.vendor_id:
        return reject(Reason.WRONG_PROPOSER)

    if (
        verify_quote(registry, quote) is not VerifyOutcome.OK
        or quote.vendor_id != h.tee_vendor_id
        or quote.user_data.pk_block != h.proposer_pubkey
    ):
        return reject(Reason.ATTESTATION_INVALID)

    if (
        block.commitment() != quote.user_data.commitment
        or h.tx_root != transactions_root(block.body.transactions)
        or h.state_root != block.body.post_state_commitment
    ):
        return reject(Reason.COMMITMENT_MISMATCH)

    if not crypto.verify(quote.user_data.pk_block, block.signing_bytes, h.enclave_signature):
        return reject(Reason.SIGNATURE_INVALID)

    ud = quote.user_data
    if (ud.height, ud.chain_id, ud.nonce) != (ctx.expected_height, ctx.chain_id, ctx.expected_nonce):
        return reject(Reason.FRESHNESS_VIOLATION)
    return ACCEPT


def reexecution_matches(block: Block, parent_state: ChainState) -> bool:
    """True iff running the canonical program reproduces the block's post-state."""
    return apply_batch(parent_state, block.body.transactions).commitment() == (
        block.body.post_state_commitment
    )


@dataclass(frozen=True)
class ReAttestation:
    vendor_id: int
    quote: AttestationQuote
    validator_id: int


def produce_reattestation(
    block: Block,
    validator: EnclaveIdentity,
    authority: VendorAuthority,
    ctx: RoundContext,
    validator_id: int = -1,
    *,
    measurement: bytes | None = None,
    claim: bytes | None = None,
) -> ReAttestation:
    """A fresh quote from the validator's vendor over the same commitment and round.

    The caller must already have accepted ``block``.
    """
    user_data = QuoteUserData(
        pk_block=validator.public_key,
        commitment=block.commitment(),
        height=ctx.expected_height,
        chain_id=ctx.chain_id,
        nonce=ctx.expected_nonce,
    )
    measured = authority.canonical_measurement if measurement is None else measurement
    quote = issue_quote(authority, measured, user_data, claim=claim)
    return ReAttestation(authority.vendor_id, quote, validator_id)


class CommitmentMismatch(Exception):
    pass


class InvalidQuote(Exception):
    pass


class NotFinalized(Exception):
    pass


class AlreadyFinalized(Exception):
    pass


@dataclass
class FinalityTracker:
    block: Block
    ctx: RoundContext
    k: int
    collected: dict[int, list[ReAttestation]] = field(default_factory=dict)
    finalized: bool = False

    @classmethod
    def for_block(cls, block: Block, ctx: RoundContext, k: int) -> "FinalityTracker":
        """Start a tracker whose first vendor is the (already verified) proposer quote."""
        tracker = cls(block=block, ctx=ctx, k=k)
        quote = block.quote()
        tracker._add(ReAttestation(quote.vendor_id, quote, -1))
        return tracker

    @property
    def candidate_commitment(self) -> bytes:
        return self.block.commitment()

    @property
    def distinct_vendors(self) -> int:
        return len(self.collected)

    def _add(self, att: ReAttestation) -> None:
        self.collected.setdefault(att.vendor_id, []).append(att)
        if self.distinct_vendors >= self.k:
            self.finalized = True

    def certificate(self) -> "FinalityCertificate":
        quotes = [atts[0].quote for _, atts in sorted(self.collected.items())]
        return FinalityCertificate(self.candidate_commitment, tuple(quotes))


def record_attestation(
    tracker: FinalityTracker, att: ReAttestation, registry: VendorRegistry
) -> FinalityTracker:
    if verify_quote(registry, att.quote) is not VerifyOutcome.OK or att.quote.vendor_id != att.vendor_id:
        raise InvalidQuote(f"re-attestation from vendor {att.vendor_id} does not verify")
    ud = att.quote.user_data
    if ud.commitment != tracker.candidate_commitment:
        raise CommitmentMismatch("re-attestation is for a different candidate")
    ctx = tracker.ctx
    if (ud.height, ud.chain_id, ud.nonce) != (ctx.expected_height, ctx.chain_id, ctx.expected_nonce):
        raise InvalidQuote("re-attestation is not fresh for this round")
    tracker._add(att)
    return tracker


@dataclass(frozen=True)
class FinalityCertificate:
    commitment: bytes
    quotes: tuple[AttestationQuote, ...]

    def write_to(self, w: Writer) -> None:
        w.fixed(self.commitment, DIGEST_SIZE)
        w.u32(len(self.quotes))
        for q in self.quotes:
            q.write_to(w)

    @classmethod
    def read_from(cls, r: Reader) -> "FinalityCertificate":
        commitment = r.fixed(DIGEST_SIZE)
        n = r.u32()
        if n > r.remaining:
            raise codec.MalformedEncoding(f"quote count {n} overruns buffer")
        return cls(commitment, tuple(AttestationQuote.read_from(r) for _ in range(n)))

    def vendors(self) -> set[int]:
        return {q.vendor_id for q in self.quotes}


def verify_certificate(
    cert: FinalityCertificate, block: Block, registry: VendorRegistry, ctx: RoundContext
) -> bool:
    """Standalone check that ``cert`` justifies finalizing ``block`` in round ``ctx``."""
    if not validate_block(block, registry, ctx).accepted:
        return False
    if cert.commitment != block.commitment():
        return False
    vendors = set()
    for q in cert.quotes:
        ud = q.user_data
        if verify_quote(registry, q) is not VerifyOutcome.OK:
            return False
        if ud.commitment != cert.commitment:
            return False
        if (ud.height, ud.chain_id, ud.nonce) != (ctx.expected_height, ctx.chain_id, ctx.expected_nonce):
            return False
        vendors.add(q.vendor_id)
    return len(vendors) >= registry.diversity_threshold_k


class StateMode(str, Enum):
    REEXECUTE = "reexecute"
    ADOPT = "adopt"


@dataclass
class LocalChain:
    """A node's finalized chain; finality is append-only, there is no reorg path."""

    registry: VendorRegistry
    roster: EnclaveRoster
    blocks: list[Block]
    state: ChainState
    certificates: list[FinalityCertificate | None] = field(default_factory=list)
    mode: StateMode = StateMode.REEXECUTE

    @classmethod
    def from_genesis(
        cls,
        registry: VendorRegistry,
        roster: EnclaveRoster,
        state: ChainState,
        mode: StateMode | str = StateMode.REEXECUTE,
    ) -> "LocalChain":
        return cls(
            registry,
            roster,
            [genesis_block(registry.chain_id, state)],
            state,
            [None],
            StateMode(mode),
        )

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.head.height

    def context(self, attempt: int = 0) -> RoundContext:
        return round_context(self.head, self.roster, self.registry.chain_id, attempt)


def finalize(
    tracker: FinalityTracker,
    chain: LocalChain,
    adopted_state: ChainState | None = None,
) -> LocalChain:
    """Append the tracked block and advance local state.

    In ``adopt`` mode the supplied post-state is taken after checking it
    against the attested state root; otherwise the batch is replayed.
    """
    if not tracker.finalized:
        raise NotFinalized(
            f"{tracker.distinct_vendors} distinct vendors, threshold {tracker.k}"
        )
    block = tracker.block
    if block.height != chain.height + 1:
        raise AlreadyFinalized(f"height {block.height} is not the next height {chain.height + 1}")
    if block.header.parent_hash != block_hash(chain.head):
        raise AlreadyFinalized("candidate does not extend the finalized head")
    if chain.mode is StateMode.ADOPT:
        if adopted_state is None or adopted_state.commitment() != block.header.state_root:
            raise ValueError("adopted state does not match the attested state root")
        new_state = adopted_state
    else:
        new_state = execute_batch(chain.state, block.body.transactions).state
    chain.blocks.append(block)
    chain.certificates.append(tracker.certificate())
    chain.state = new_state
    return chain


def distinct_vendor_count(quotes: Iterable[AttestationQuote]) -> int:
    return len({q.vendor_id for q in quotes})
