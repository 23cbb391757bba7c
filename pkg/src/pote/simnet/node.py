"""Validator round state machine.

A node is in exactly one round ``(height, attempt)`` at a time. Messages for
later rounds are buffered and replayed on entry; messages for earlier
rounds only cost verification. All handlers run inside the simulator's event
loop, which sets ``sim.now`` and the operation-counter sink.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from pote.attestation import EnclaveIdentity, VendorAuthority, verify_quote
from pote.chain import Block, ChainState, block_hash, build_block, seal_block
from pote.simnet import adversary as adv
from pote.simnet.messages import Attest, Proposal, Sync, TimeoutNotice, Vote
from pote.simnet.records import RoundRecord, pack_bitmap
from pote.validation import (
    CommitmentMismatch,
    FinalityTracker,
    InvalidQuote,
    LocalChain,
    ReAttestation,
    Reason,
    RoundContext,
    StateMode,
    finalize,
    produce_reattestation,
    record_attestation,
    validate_block,
    verify_certificate,
)

if TYPE_CHECKING:
    from pote.simnet.engine import Simulation


@dataclass
class Candidate:
    block: Block
    tracker: FinalityTracker
    post_state: ChainState
    arrived_ms: int


@dataclass
class RoundState:
    height: int
    attempt: int
    ctx: RoundContext
    candidates: dict[bytes, Candidate] = field(default_factory=dict)
    pending: dict[bytes, list[ReAttestation]] = field(default_factory=dict)
    seen: set[bytes] = field(default_factory=set)
    arrivals: dict[bytes, int] = field(default_factory=dict)
    votes: dict[bytes, set[int]] = field(default_factory=dict)
    voted: set[bytes] = field(default_factory=set)

    @property
    def key(self) -> tuple[int, int]:
        return (self.height, self.attempt)


class ValidatorNode:
    def __init__(
        self,
        sim: "Simulation",
        index: int,
        enclave: EnclaveIdentity,
        authority: VendorAuthority,
        chain: LocalChain,
        colluder: bool,
    ):
        self.sim = sim
        self.id = index
        self.enclave = enclave
        self.authority = authority
        self.chain = chain
        self.colluder = colluder
        self.round: RoundState | None = None
        self.halted = False
        self.entries = 0
        self.future: dict[tuple[int, int], list[tuple[int, object]]] = {}
        self.post_states: list[ChainState] = [chain.state]
        self.final_attempts: list[int] = [0]
        self.final_contexts: list[RoundContext | None] = [None]
        self._synced: set[tuple[int, int]] = set()

    def __repr__(self) -> str:
        return f"ValidatorNode({self.id}, vendor={self.enclave.vendor_id})"

    @property
    def vendor_id(self) -> int:
        return self.enclave.vendor_id

    def colluding_at(self, height: int) -> bool:
        return self.colluder and self.sim.scenario.adversary.active(height)

    # round lifecycle

    def on_enter(self, key: tuple[int, int]) -> None:
        height, attempt = key
        self.entries += 1
        if self.entries > self.sim.scenario.rounds:
            self.halted = True
            self.round = None
            self.future.clear()
            return
        ctx = self.chain.context(attempt)
        self.round = RoundState(height, attempt, ctx)
        sim = self.sim
        sim.record_for(key, self, ctx)
        with sim.charging(self.id, key):
            start = sim.proposal_start(sim.now)
            sim.schedule(start + sim.scenario.protocol.round_timeout_ms, self.id, "timeout", key, key)
            elected = sim.index_of(ctx.expected_proposer.public_key)
            if elected == self.id:
                self._propose(ctx, start, rogue=False)
            if (
                attempt == 0
                and sim.scenario.adversary.has("rogue_proposer", height)
                and self.id == sim.rogue_for(elected)
            ):
                self._propose(ctx, start, rogue=True)
        for k in [k for k in self.future if k < key]:
            del self.future[k]
        for sender, msg in self.future.pop(key, []):
            with sim.charging(self.id, (msg.height, msg.attempt)):
                self.on_message(sender, msg)

    def _propose(self, ctx: RoundContext, start: int, rogue: bool) -> None:
        sim = self.sim
        h = ctx.expected_height
        txs = sim.workload.batch(h)
        executed = sim.execute(self.chain.state, txs)
        unsealed = build_block(
            self.chain.head, self.chain.state, txs, start, self.enclave, sim.registry, executed=executed
        )
        post_state = executed.state
        if not rogue and self.colluding_at(h):
            post_state = adv.forge_state(executed.state)
            block = adv.forged_block(
                unsealed, post_state, self.enclave, self.authority, ctx.expected_nonce, sim.malicious_measurement
            )
        else:
            block = seal_block(unsealed, self.enclave, self.authority, ctx.expected_nonce)
            mode = None if rogue else sim.rewrite_mode(h, ctx.attempt)
            if mode is not None:
                stale_h, stale_nonce = adv.stale_round(self.final_contexts[-1])
                block = adv.apply_adversary(
                    mode, block, adv.Intercept(self.enclave, self.authority, stale_h, stale_nonce)
                )
        delay = sim.delay.exec_ms(len(txs)) + sim.delay.attestation_issue_ms
        msg = Proposal(h, ctx.attempt, block, post_state)
        sim.schedule(start + delay, self.id, "send_proposal", (msg, rogue), (h, ctx.attempt))

    def on_send_proposal(self, payload: tuple[Proposal, bool]) -> None:
        msg, rogue = payload
        rec = self.sim.records[(msg.height, msg.attempt)]
        if not rogue:
            rec.t_proposed_ms = self.sim.now
            rec.tx_count = len(msg.block.body.transactions)
            rec.block_hash = block_hash(msg.block).hex()
            executed = self.sim.execute(self.chain.state, msg.block.body.transactions)
            rec.skip_bitmap = pack_bitmap(executed.skipped)
        self.sim.broadcast(self.id, msg)
        self.on_message(self.id, msg)

    def on_timeout(self, key: tuple[int, int]) -> None:
        r = self.round
        if self.halted or r is None or r.key != key:
            return
        self.sim.records[key].timeouts.append(self.id)
        self.sim.broadcast(self.id, TimeoutNotice(*key))
        self.on_enter((key[0], key[1] + 1))

    # message intake

    def on_deliver(self, payload: tuple[int, object]) -> None:
        sender, msg = payload
        self.on_message(sender, msg)

    def _position(self, height: int, attempt: int) -> int:
        """-1 for a past round, 0 for the current one, 1 for a future one."""
        r = self.round
        if r is None:
            return -1
        key = (height, attempt)
        return (key > r.key) - (key < r.key)

    def _buffer(self, sender: int, msg) -> None:
        self.future.setdefault((msg.height, msg.attempt), []).append((sender, msg))

    def on_message(self, sender: int, msg) -> None:
        if isinstance(msg, Attest):
            self._on_attest(sender, msg)
        elif isinstance(msg, Proposal):
            self._on_proposal(sender, msg)
        elif isinstance(msg, Vote):
            self._on_vote(sender, msg)
        elif isinstance(msg, TimeoutNotice):
            self._on_timeout_notice(sender, msg)
        elif isinstance(msg, Sync):
            self._on_sync(sender, msg)
        else:  # pragma: no cover
            raise TypeError(f"unknown message {msg!r}")

    def _on_proposal(self, sender: int, msg: Proposal) -> None:
        if self.halted:
            return
        pos = self._position(msg.height, msg.attempt)
        if pos > 0:
            self._buffer(sender, msg)
            return
        if pos < 0:
            return
        r = self.round
        bh = block_hash(msg.block)
        if bh in r.seen:
            return
        r.seen.add(bh)
        r.arrivals[bh] = self.sim.now
        self.sim.records[r.key].observe(self.id, self.sim.now)
        self.sim.after(self.sim.delay.quote_verify_ms, self.id, "validate", msg, r.key)

    def on_validate(self, msg: Proposal) -> None:
        if self._position(msg.height, msg.attempt) != 0:
            return
        r = self.round
        rec = self.sim.records[r.key]
        block = msg.block
        verdict = validate_block(block, self.sim.registry, r.ctx)
        if not verdict.accepted:
            rec.reject(self.id, verdict.reason.value)
            return
        coalition = self.colluding_at(r.height) and self.sim.is_colluder_key(block.header.proposer_pubkey)
        if not coalition:
            # Re-attesting vouches for execution, so the batch is always replayed.
            executed = self.sim.execute(self.chain.state, block.body.transactions)
            if executed.state.commitment() != block.header.state_root:
                rec.reject(self.id, Reason.STATE_MISMATCH.value)
                return
        commitment = block.commitment()
        cand = Candidate(block, FinalityTracker.for_block(block, r.ctx, self.sim.scenario.k), msg.post_state, r.arrivals[block_hash(block)])
        r.candidates[commitment] = cand
        d = self.sim.delay
        self.sim.after(
            self.sim.delay.exec_ms(len(block.body.transactions)) + d.attestation_issue_ms,
            self.id,
            "reattest",
            (r.ctx, block, coalition),
            r.key,
        )
        for att in r.pending.pop(commitment, []):
            self.sim.after(d.quote_verify_ms, self.id, "verify_att", Attest(r.height, r.attempt, att), r.key)
        self._check_final(commitment)

    def on_reattest(self, payload: tuple[RoundContext, Block, bool]) -> None:
        ctx, block, coalition = payload
        if coalition:
            att = produce_reattestation(
                block,
                self.enclave,
                self.authority,
                ctx,
                self.id,
                measurement=self.sim.malicious_measurement,
                claim=self.authority.canonical_measurement,
            )
        else:
            att = produce_reattestation(block, self.enclave, self.authority, ctx, self.id)
        self.sim.broadcast(self.id, Attest(ctx.expected_height, ctx.attempt, att))
        if self._position(ctx.expected_height, ctx.attempt) == 0:
            commitment = att.quote.user_data.commitment
            cand = self.round.candidates.get(commitment)
            if cand is not None:
                cand.tracker._add(att)
                self._check_final(commitment)

    def _on_attest(self, sender: int, msg: Attest) -> None:
        pos = self._position(msg.height, msg.attempt)
        if pos > 0 and not self.halted:
            self._buffer(sender, msg)
            return
        key = (msg.height, msg.attempt)
        if pos == 0:
            commitment = msg.att.quote.user_data.commitment
            if commitment not in self.round.candidates:
                self.round.pending.setdefault(commitment, []).append(msg.att)
                return
        self.sim.after(self.sim.delay.quote_verify_ms, self.id, "verify_att", msg, key)

    def on_verify_att(self, msg: Attest) -> None:
        if self._position(msg.height, msg.attempt) != 0:
            # Too late to matter, but the quote is still checked.
            verify_quote(self.sim.registry, msg.att.quote)
            return
        commitment = msg.att.quote.user_data.commitment
        cand = self.round.candidates.get(commitment)
        if cand is None:  # pragma: no cover - pending atts are only released for candidates
            verify_quote(self.sim.registry, msg.att.quote)
            return
        try:
            record_attestation(cand.tracker, msg.att, self.sim.registry)
        except (InvalidQuote, CommitmentMismatch):
            return
        self._check_final(commitment)

    def _on_vote(self, sender: int, msg: Vote) -> None:
        pos = self._position(msg.height, msg.attempt)
        if pos > 0 and not self.halted:
            self._buffer(sender, msg)
            return
        if pos == 0:
            self.round.votes.setdefault(msg.commitment, set()).add(sender)
            self._check_final(msg.commitment)

    def _check_final(self, commitment: bytes) -> None:
        r = self.round
        cand = r.candidates.get(commitment) if r else None
        if cand is None or not cand.tracker.finalized:
            return
        if self.sim.scenario.protocol.mode == "slotted":
            if commitment not in r.voted:
                r.voted.add(commitment)
                r.votes.setdefault(commitment, set()).add(self.id)
                self.sim.broadcast(self.id, Vote(r.height, r.attempt, commitment))
            if len(r.votes.get(commitment, ())) < self.sim.vote_quorum:
                return
        self._finalize(cand.block, cand.tracker, cand.post_state, r.key, cand.arrived_ms)

    def _finalize(
        self,
        block: Block,
        tracker: FinalityTracker,
        post_state: ChainState,
        key: tuple[int, int],
        observed_ms: int,
    ) -> None:
        sim = self.sim
        rec: RoundRecord = sim.records[key]
        replay = sim.execute(self.chain.state, block.body.transactions).state
        dual_ok = replay.commitment() == post_state.commitment() == block.header.state_root
        # The local chain always takes the state handed to it; which path
        # supplies it is the configured state mode (colluders take their own).
        if self.colluding_at(block.height) or sim.scenario.protocol.state_mode is StateMode.ADOPT:
            adopted = post_state
        else:
            adopted = replay
        finalize(tracker, self.chain, adopted_state=adopted)
        height = block.height
        rec.t_first_observed_ms[self.id] = observed_ms
        rec.t_finalized_ms[self.id] = sim.now
        rec.finalized_hash[self.id] = block_hash(block).hex()
        rec.dual_path_ok[self.id] = dual_ok
        self.post_states.append(self.chain.state)
        self.final_attempts.append(key[1])
        self.final_contexts.append(tracker.ctx)
        self.round = None
        self.on_enter((height + 1, 0))

    # catch-up

    def _on_timeout_notice(self, sender: int, msg: TimeoutNotice) -> None:
        h = msg.height
        if self.chain.height < h or (sender, h) in self._synced:
            return
        self._synced.add((sender, h))
        cert = self.chain.certificates[h]
        reply = Sync(h, self.final_attempts[h], self.chain.blocks[h], cert, self.post_states[h])
        self.sim.broadcast(self.id, reply, recipients=[sender])

    def _on_sync(self, sender: int, msg: Sync) -> None:
        if self.halted or self.round is None or msg.height != self.round.height:
            return
        self.sim.after(
            self.sim.delay.quote_verify_ms, self.id, "apply_sync", msg, (msg.height, msg.attempt)
        )

    def on_apply_sync(self, msg: Sync) -> None:
        r = self.round
        if self.halted or r is None or msg.height != r.height:
            return
        ctx = self.chain.context(msg.attempt)
        block = msg.block
        if not verify_certificate(msg.certificate, block, self.sim.registry, ctx):
            return
        coalition = self.colluding_at(msg.height) and self.sim.is_colluder_key(block.header.proposer_pubkey)
        if not coalition:
            executed = self.sim.execute(self.chain.state, block.body.transactions)
            if executed.state.commitment() != block.header.state_root:
                self.sim.records[(msg.height, msg.attempt)].reject(self.id, Reason.STATE_MISMATCH.value)
                return
        tracker = FinalityTracker(block, ctx, self.sim.scenario.k)
        for q in msg.certificate.quotes:
            tracker._add(ReAttestation(q.vendor_id, q, -1))
        rec = self.sim.records[(msg.height, msg.attempt)]
        observed = rec.t_first_observed_ms.get(self.id, self.sim.now)
        if (msg.height, msg.attempt) != r.key:
            observed = self.sim.now
        self._finalize(block, tracker, msg.post_state, (msg.height, msg.attempt), observed)
