"""Discrete-event loop, network model and the ``run_scenario`` entry point."""

from __future__ import annotations

import heapq
import json
import math
from collections import Counter
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

from pote import counters
from pote.chain import BatchResult, ChainState, Transaction, encode_transactions, execute_batch
from pote.genesis import Genesis
from pote.simnet import adversary as adv
from pote.simnet.config import DelayModel, Scenario
from pote.simnet.node import ValidatorNode
from pote.simnet.records import RoundRecord
from pote.simnet.workload import WorkloadGenerator
from pote.validation import LocalChain, RoundContext, StateMode

_REWRITE_MODES = ("tamper_after_attest", "keep_quote_alter_block", "replay_old_quote")


@dataclass
class SimClock:
    now_ms: int = 0

    def advance(self, t: int) -> None:
        if t < self.now_ms:
            raise ValueError(f"clock cannot go back from {self.now_ms} to {t}")
        self.now_ms = t


@dataclass(frozen=True, order=True)
class Event:
    """Pending work for one node; ordered by (time, sequence number)."""

    time: int
    seq: int
    node: int = field(compare=False)
    kind: str = field(compare=False)
    payload: Any = field(compare=False, default=None)
    # (height, attempt) the work is charged to in the operation counters
    tag: tuple[int, int] | None = field(compare=False, default=None)


@dataclass
class LivenessStall:
    height: int
    attempt: int


@dataclass
class SimResult:
    scenario: Scenario
    seed: int
    records: list[RoundRecord]
    nodes: list[ValidatorNode]
    dropped: int
    partitioned: int
    events: int

    @property
    def stalls(self) -> list[LivenessStall]:
        return [LivenessStall(r.height, r.attempt) for r in self.records if r.stalled]

    @property
    def final_states(self) -> list[ChainState]:
        return [n.chain.state for n in self.nodes]

    def honest_nodes(self) -> list[int]:
        """Validators that never colluded during the run."""
        return [n.id for n in self.nodes if not (n.colluder and self.scenario.adversary.f)]

    def records_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)


class Simulation:
    def __init__(self, scenario: Scenario, seed: int | None = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.delay: DelayModel = scenario.delay
        genesis = Genesis.generate(
            chain_id=scenario.chain_id,
            vendor_names=scenario.vendors,
            enclaves_per_vendor=scenario.enclaves_per_vendor,
            k=scenario.k,
            accounts=scenario.workload.accounts,
            initial_balance=scenario.workload.initial_balance,
            run_seed=self.seed,
            program=scenario.program,
        )
        setup = genesis.build()
        self.registry = setup.registry
        compromised = set(scenario.adversary.compromised_vendors)
        for vid in compromised:
            setup.authorities[vid].compromised = True
        self.malicious_measurement = adv.malicious_measurement(scenario.program)

        root = np.random.SeedSequence(self.seed)
        net_seq, load_seq = root.spawn(2)
        self.rng = np.random.Generator(np.random.Philox(net_seq))
        self.workload = WorkloadGenerator(
            scenario.workload, setup.state, np.random.Generator(np.random.Philox(load_seq))
        )

        # Interleave vendors so validator indices cycle through vendor classes.
        enclaves = sorted(setup.enclaves, key=lambda e: (e.enclave_index, e.vendor_id))
        self.nodes: list[ValidatorNode] = []
        for i, enclave in enumerate(enclaves):
            chain = LocalChain.from_genesis(self.registry, setup.roster, setup.state, StateMode.ADOPT)
            self.nodes.append(
                ValidatorNode(self, i, enclave, setup.authorities[enclave.vendor_id], chain, enclave.vendor_id in compromised)
            )
        self._index = {n.enclave.public_key: n.id for n in self.nodes}
        self._colluder_keys = {n.enclave.public_key for n in self.nodes if n.colluder}
        self.vote_quorum = math.ceil(2 * len(self.nodes) / 3)

        self.clock = SimClock()
        self.records: dict[tuple[int, int], RoundRecord] = {}
        self._record_owner_colluder: dict[tuple[int, int], bool] = {}
        self._queue: list[tuple] = []
        self._seq = 0
        self._spawned: list[Event] | None = None
        self._exec_cache: dict[tuple[bytes, bytes], BatchResult] = {}
        self.dropped = 0
        self.partitioned = 0
        self.events = 0

    @property
    def now(self) -> int:
        return self.clock.now_ms

    # scheduling

    def schedule(self, t: int, node: int, kind: str, payload: Any = None, tag: tuple[int, int] | None = None) -> Event:
        ev = Event(t, self._seq, node, kind, payload, tag)
        self._seq += 1
        heapq.heappush(self._queue, (t, ev.seq, ev))
        if self._spawned is not None:
            self._spawned.append(ev)
        return ev

    def after(self, delay: int, node: int, kind: str, payload: Any, tag: tuple[int, int]) -> None:
        """Run a handler ``delay`` ms from now; zero delay runs it inline."""
        if delay:
            self.schedule(self.now + delay, node, kind, payload, tag)
        else:
            with self.charging(node, tag):
                getattr(self.nodes[node], "on_" + kind)(payload)

    def step(self, event: Event) -> list[Event]:
        """Process one event and return the events it spawned."""
        self.clock.advance(event.time)
        self.events += 1
        spawned: list[Event] = []
        outer, self._spawned = self._spawned, spawned
        try:
            if event.kind == "deliver" and self._partitioned(event.payload[0], event.node, event.time):
                self.partitioned += 1
                return spawned
            with self.charging(event.node, event.tag):
                getattr(self.nodes[event.node], "on_" + event.kind)(event.payload)
        finally:
            self._spawned = outer
        return spawned

    def run(self) -> SimResult:
        for node in self.nodes:
            self.schedule(0, node.id, "enter", (1, 0))
        queue = self._queue
        while queue:
            _, _, ev = heapq.heappop(queue)
            self.step(ev)
        ordered = [self.records[k] for k in sorted(self.records)]
        for rec in ordered:
            deciders = rec.honest if rec.honest else list(range(len(self.nodes)))
            rec.stalled = not any(n in rec.t_finalized_ms for n in deciders)
        return SimResult(self.scenario, self.seed, ordered, self.nodes, self.dropped, self.partitioned, self.events)

    @contextmanager
    def charging(self, node: int, tag: tuple[int, int] | None) -> Iterator[None]:
        rec = self.records.get(tag) if tag is not None else None
        if rec is None:
            with counters.suspended():
                yield
            return
        sink = rec.ops.get(node)
        if sink is None:
            sink = rec.ops[node] = Counter()
        with counters.recording(sink):
            yield

    # network

    def _partitioned(self, sender: int, recipient: int, t: int) -> bool:
        return any(p.blocks(sender, recipient, t) for p in self.delay.partitions)

    def broadcast(self, sender: int, msg: Any, recipients: Sequence[int] | None = None) -> None:
        """Send ``msg`` to every other node (or ``recipients``) through the delay model."""
        if recipients is None:
            recipients = [j for j in range(len(self.nodes)) if j != sender]
        n = len(recipients)
        if n == 0:
            return
        d = self.delay
        depart = self.now + d.fanout_ms(n)
        drops = self.rng.random(n) < float(d.drop_probability) if d.drop_probability else None
        jitter = self.rng.integers(-d.jitter_ms, d.jitter_ms + 1, size=n) if d.jitter_ms else None
        tag = (msg.height, msg.attempt)
        payload = (sender, msg)
        for i, j in enumerate(recipients):
            if drops is not None and drops[i]:
                self.dropped += 1
                continue
            lat = d.base_latency_ms + (int(jitter[i]) if jitter is not None else 0)
            self.schedule(depart + max(0, lat), j, "deliver", payload, tag)

    # protocol helpers used by nodes

    def proposal_start(self, now: int) -> int:
        if self.scenario.protocol.mode == "slotted":
            slot = self.scenario.protocol.slot_ms
            return -(-now // slot) * slot
        return now

    def index_of(self, public_key: bytes) -> int:
        return self._index[public_key]

    def rogue_for(self, elected: int) -> int:
        return (elected + 1) % len(self.nodes)

    def is_colluder_key(self, public_key: bytes) -> bool:
        return public_key in self._colluder_keys

    def rewrite_mode(self, height: int, attempt: int) -> str | None:
        if attempt:
            return None
        adversary = self.scenario.adversary
        for mode in _REWRITE_MODES:
            if adversary.has(mode, height):
                return mode
        return None

    def execute(self, state: ChainState, txs: Sequence[Transaction]) -> BatchResult:
        """Memoized ``execute_batch``; every honest node replays the same batch."""
        with counters.suspended():
            key = (state.commitment(), encode_transactions(txs))
            hit = self._exec_cache.get(key)
            if hit is None:
                if len(self._exec_cache) > 64:
                    self._exec_cache.clear()
                hit = self._exec_cache[key] = execute_batch(state, txs)
        return hit

    def record_for(self, key: tuple[int, int], node: ValidatorNode, ctx: RoundContext) -> RoundRecord:
        """The round's record; honest nodes' view of the election wins over colluders'."""
        height, attempt = key
        rec = self.records.get(key)
        colluding = node.colluding_at(height)
        if rec is not None and not (self._record_owner_colluder[key] and not colluding):
            return rec
        elected = self.index_of(ctx.expected_proposer.public_key)
        adversarial = set()
        if self.scenario.adversary.active(height):
            adversarial |= {n.id for n in self.nodes if n.colluder}
        if self.rewrite_mode(height, attempt) is not None:
            adversarial.add(elected)
        if attempt == 0 and self.scenario.adversary.has("rogue_proposer", height):
            adversarial.add(self.rogue_for(elected))
        honest = [n.id for n in self.nodes if n.id not in adversarial]
        if rec is None:
            rec = self.records[key] = RoundRecord(
                height, attempt, elected, self.nodes[elected].vendor_id, honest
            )
        else:
            rec.proposer, rec.proposer_vendor, rec.honest = elected, self.nodes[elected].vendor_id, honest
        self._record_owner_colluder[key] = colluding
        return rec


def run_scenario(scenario: Scenario, seed: int | None = None) -> SimResult:
    """Run ``scenario`` to completion; a pure function of (scenario, seed)."""
    return Simulation(scenario, seed).run()
