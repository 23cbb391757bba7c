"""End-to-end acceptance criteria, one test per criterion.

Each test appends a PASS/FAIL line to the terminal summary before asserting,
so a full ``pytest`` run lists the verdict for every criterion.
"""

import random
import time
from dataclasses import replace
from fractions import Fraction

from scipy.stats import chisquare

import oracle
from acceptance_log import ACCEPTANCE
from fixtures import GOLDEN, golden_objects, make_world
from pote import codec
from pote.attestation import AttestationQuote, QuoteUserData, VerifyOutcome, verify_quote
from pote.chain import Block, BlockBody, BlockHeader, ChainState, Transaction, apply_batch, block_hash
from pote.genesis import account_id
from pote.harness.cli import write_run
from pote.harness.sweeps import bundled_scenario, sweep_latency, sweep_tps
from pote.selection import EnclaveRoster, derive_seed, select_proposer
from pote.simnet import AdversarySpec, run_scenario
from pote.validation import StateMode

def verdict(n: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} -- {detail}")
    assert ok, detail

def small(sc, tx=100, **kw):
    return sc.replace(workload=replace(sc.workload, tx_per_block=tx), **kw)

# --- shared checks ------------------------------------------------------------

def oracle_replay(node, scenario) -> list[str]:
    """Re-execute a node's finalized chain from genesis with the oracle executor.

    Returns a list of discrepancies (empty when every state root checks out).
    """
    problems = []
    acc = {account_id(i): (scenario.workload.initial_balance, 0) for i in range(scenario.workload.accounts)}
    blocks = node.chain.blocks
    if blocks[0].header.state_root != oracle.sha256(oracle.state(acc)):
        problems.append("genesis state root")
    for b in blocks[1:]:
        items = [(t.sender, t.recipient, t.amount, t.tx_nonce) for t in b.body.transactions]
        acc = oracle.execute(acc, items)
        if b.header.state_root != oracle.sha256(oracle.state(acc)):
            problems.append(f"height {b.height}")
    if node.chain.state.commitment() != oracle.sha256(oracle.state(acc)):
        problems.append("final state")
    return problems

def forks(result) -> list[int]:
    """Heights at which honest validators hold different finalized blocks."""
    by_height: dict[int, set] = {}
    for i in result.honest_nodes():
        for b in result.nodes[i].chain.blocks:
            by_height.setdefault(b.height, set()).add(block_hash(b))
    return sorted(h for h, s in by_height.items() if len(s) > 1)

def random_scenario(rng: random.Random, *, full_collusion: bool = False):
    nv = rng.randint(2, 5)
    k = rng.randint(1, nv) if not full_collusion else rng.randint(1, min(nv, 3))
    f = k if full_collusion else rng.randint(0, k - 1)
    enclaves = tuple(rng.randint(1, 3) for _ in range(nv))
    base = bundled_scenario("baseline")
    delay = replace(base.delay, jitter_ms=rng.randint(0, 8), base_latency_ms=rng.randint(3, 15))
    return small(
        base,
        tx=rng.randint(10, 150),
        seed=rng.randrange(2**32),
        rounds=rng.randint(3, 6),
        vendors=tuple(f"v{i}" for i in range(nv)),
        enclaves_per_vendor=enclaves,
        validators=sum(enclaves),
        k=k,
        delay=delay,
        adversary=AdversarySpec(compromised_vendors=tuple(sorted(rng.sample(range(1, nv + 1), f)))),
    )

# --- criteria -----------------------------------------------------------------

def test_criterion_1_tps():
    t0 = time.perf_counter()
    [one] = sweep_tps("by_processing_time", [100], baseline=False)
    rows = sweep_tps("by_block_size", [500, 1000, 2000, 5000])
    elapsed = time.perf_counter() - t0
    sizes, baseline = rows[:-1], rows[-1]
    got = [r.tps for r in sizes]
    ok = (
        one.tps == 10_000
        and got == [5_000, 10_000, 20_000, 50_000]
        and baseline.tps == Fraction(250, 3)
        and f"{float(baseline.tps):.1f}" == "83.3"
        and elapsed < 1.0
    )
    detail = (
        f"1000tx/100ms={one.tps}, sizes={[int(x) for x in got]}, "
        f"baseline={float(baseline.tps):.1f}, {elapsed:.2f}s"
    )
    verdict(1, "TPS reproduction", ok, detail)

def test_criterion_2_latency_envelope():
    base = bundled_scenario("latency")
    assert base.delay.exec_ms(1000) == 20 and base.delay.attestation_issue_ms == 25
    assert (base.delay.base_latency_ms, base.delay.jitter_ms) == (10, 5)
    counts = [5, 25, 75, 150, 225]
    t0 = time.perf_counter()
    rows = sweep_latency(base, counts)
    elapsed = time.perf_counter() - t0
    medians = [r.median_latency_ms for r in rows]
    monotone = all(a <= b for a, b in zip(medians, medians[1:]))
    ok = None not in medians and monotone and medians[-1] <= 150 and elapsed < 120
    detail = f"medians {dict(zip(counts, [float(m) for m in medians]))} ms, {elapsed:.1f}s"
    verdict(2, "commit-latency envelope", ok, detail)

MODES = {
    "tamper_after_attest": "commitment_mismatch",
    "keep_quote_alter_block": "signature_invalid",
    "replay_old_quote": "freshness_violation",
    "rogue_proposer": "wrong_proposer",
}

def test_criterion_3_adversary_rejections():
    base = small(bundled_scenario("baseline"), rounds=4)
    failures = []
    for mode, reason in MODES.items():
        for seed in range(20):
            adv = AdversarySpec(modes=(mode,), start_height=2, end_height=2)
            result = run_scenario(base.replace(adversary=adv), seed)
            [rec] = [r for r in result.records if (r.height, r.attempt) == (2, 0)]
            wrong = [n for n in rec.honest if rec.rejections.get(n) != [reason]]
            if not rec.honest or wrong:
                failures.append((mode, seed, wrong))
    ok = not failures
    verdict(3, "security check completeness", ok, f"{len(MODES) * 20} runs, failures={failures[:3]}")

def test_criterion_4_vendor_threshold():
    rng = random.Random(20240601)
    unsafe, finalized_rounds = [], 0
    for i in range(100):
        sc = random_scenario(rng)
        result = run_scenario(sc)
        finalized_rounds += sum(not r.stalled for r in result.records)
        for n in result.honest_nodes():
            problems = oracle_replay(result.nodes[n], sc)
            if problems:
                unsafe.append((i, n, problems))
    forged = 0
    for _ in range(10):
        sc = random_scenario(rng, full_collusion=True)
        result = run_scenario(sc)
        forged += sum(1 for node in result.nodes if node.colluder and oracle_replay(node, sc))
    ok = not unsafe and forged > 0
    detail = (
        f"f<k: 100 scenarios, {finalized_rounds} finalized rounds, {len(unsafe)} unsafe; "
        f"f=k: {forged} colluding trackers finalized a forged chain"
    )
    verdict(4, "vendor-threshold safety and tightness", ok, detail)

def test_criterion_5_forks_and_reruns(tmp_path):
    rng = random.Random(7)
    scenarios = [small(bundled_scenario(n)) for n in ("baseline", "latency", "partition")]
    scenarios += [random_scenario(rng) for _ in range(10)]
    adv = AdversarySpec(modes=("tamper_after_attest",), start_height=2, end_height=3)
    scenarios.append(small(bundled_scenario("baseline"), adversary=adv))
    forked, differing = [], []
    for i, sc in enumerate(scenarios):
        a, b = tmp_path / f"{i}a", tmp_path / f"{i}b"
        first = run_scenario(sc)
        write_run(first, a)
        write_run(run_scenario(sc), b)
        if forks(first):
            forked.append(i)
        for name in ("rounds.jsonl", "summary.json"):
            if (a / name).read_bytes() != (b / name).read_bytes():
                differing.append((i, name))
    ok = not forked and not differing
    verdict(5, "fork-freedom and determinism", ok, f"{len(scenarios)} scenarios, forks={forked}, rerun diffs={differing}")

def test_criterion_6_execution_determinism():
    rng = random.Random(99)
    bad = []
    for i in range(1000):
        ids = [rng.randbytes(32) for _ in range(rng.randint(1, 10))]
        accounts = {a: (rng.choice([0, rng.randint(0, 1000), 2**64 - 1 - rng.randint(0, 5)]), rng.randint(0, 3)) for a in ids}
        pool = ids + [rng.randbytes(32)]
        batch = [
            Transaction(rng.choice(pool), rng.choice(pool), rng.randint(0, 1200), rng.randint(0, 4))
            for _ in range(rng.randint(0, 40))
        ]
        items = list(accounts.items())
        rng.shuffle(items)
        one = apply_batch(ChainState(accounts), batch)
        two = apply_batch(ChainState(dict(items)), batch)
        expect = oracle.execute(accounts, [(t.sender, t.recipient, t.amount, t.tx_nonce) for t in batch])
        if (
            one.commitment() != two.commitment()
            or one.commitment() != oracle.sha256(oracle.state(expect))
            or one.total_balance() != sum(b for b, _ in accounts.values())
        ):
            bad.append(i)

    base = small(bundled_scenario("baseline"))
    runs = [base, base.replace(protocol=replace(base.protocol, state_mode=StateMode.ADOPT))]
    runs += [base.replace(adversary=AdversarySpec(modes=(m,), start_height=2, end_height=2)) for m in MODES]
    runs += [random_scenario(random.Random(s)) for s in range(10)]
    dual_mismatch, rounds = [], 0
    for j, sc in enumerate(runs):
        result = run_scenario(sc)
        honest = set(result.honest_nodes())
        for rec in result.records:
            for n, agree in rec.dual_path_ok.items():
                if n in honest:
                    rounds += 1
                    if not agree:
                        dual_mismatch.append((j, rec.height, n))
    ok = not bad and not dual_mismatch and rounds > 0
    detail = f"1000 pairs, {len(bad)} mismatched; {rounds} dual-path finalizations, {len(dual_mismatch)} disagree"
    verdict(6, "execution determinism and conservation", ok, detail)

def test_criterion_7_selection_uniformity():
    world = make_world(enclaves=(1, 2, 3, 5), k=1)
    roster: EnclaveRoster = world.setup.roster
    t0 = time.perf_counter()
    picks: dict[int, dict[int, int]] = {v: {} for v in roster.by_vendor}
    n = 100_000
    for i in range(n):
        e = select_proposer(derive_seed(i.to_bytes(32, "little"), 1 + i % 1000), roster)
        picks[e.vendor_id][e.enclave_index] = picks[e.vendor_id].get(e.enclave_index, 0) + 1
    elapsed = time.perf_counter() - t0
    shares = {v: sum(c.values()) / n for v, c in picks.items()}
    pvalues = {}
    for v, counts in picks.items():
        observed = [counts.get(e.enclave_index, 0) for e in roster.by_vendor[v]]
        if len(observed) > 1:
            pvalues[v] = chisquare(observed).pvalue
    ok = all(abs(s - 0.25) <= 0.02 for s in shares.values()) and all(p > 0.001 for p in pvalues.values()) and elapsed < 10
    detail = (
        "shares " + ", ".join(f"{v}:{s:.4f}" for v, s in shares.items())
        + "; chi-square p " + ", ".join(f"{v}:{p:.3f}" for v, p in pvalues.items())
        + f"; {elapsed:.1f}s"
    )
    verdict(7, "selection uniformity", ok, detail)

def _random_quote(rng: random.Random) -> AttestationQuote:
    ud = QuoteUserData(rng.randbytes(32), rng.randbytes(32), rng.getrandbits(64), rng.getrandbits(64), rng.randbytes(32))
    return AttestationQuote(rng.randrange(256), rng.randbytes(32), ud, rng.choice([b"", rng.randbytes(64)]))

def _random_block(rng: random.Random) -> Block:
    header = BlockHeader(
        rng.randbytes(32), rng.randbytes(32), rng.randbytes(32),
        rng.getrandbits(64), rng.getrandbits(64), rng.getrandbits(64),
        rng.randbytes(32), rng.randrange(256),
        rng.choice([b"", _random_quote(rng).to_bytes()]),
        rng.randbytes(rng.choice([0, 64, rng.randrange(97)])),
    )
    txs = tuple(
        Transaction(rng.randbytes(32), rng.randbytes(32), rng.getrandbits(64), rng.getrandbits(64))
        for _ in range(rng.randint(0, 8))
    )
    return Block(header, BlockBody(txs, rng.randbytes(32)))

def test_criterion_8_codec_fidelity():
    rng = random.Random(8)
    roundtrip_failures = 0
    for _ in range(10_000):
        q = _random_quote(rng)
        b = _random_block(rng)
        h = b.header
        expect = oracle.header(
            h.parent_hash, h.state_root, h.tx_root, h.timestamp_ms, h.height, h.chain_id,
            h.proposer_pubkey, h.tee_vendor_id, h.attestation_quote, h.enclave_signature,
        ) + oracle.body([(t.sender, t.recipient, t.amount, t.tx_nonce) for t in b.body.transactions], b.body.post_state_commitment)
        raw = b.to_bytes()
        if AttestationQuote.from_bytes(q.to_bytes()) != q or Block.from_bytes(raw) != b or raw != expect:
            roundtrip_failures += 1

    world = make_world()
    quote_raw = (GOLDEN / "quote.bin").read_bytes()
    assert verify_quote(world.registry, AttestationQuote.from_bytes(quote_raw)) is VerifyOutcome.OK
    survived = []
    for i in range(len(quote_raw)):
        for mask in (0x01, 0x80, 0xFF):
            flipped = bytearray(quote_raw)
            flipped[i] ^= mask
            try:
                outcome = verify_quote(world.registry, AttestationQuote.from_bytes(bytes(flipped)))
            except codec.MalformedEncoding:
                continue
            if outcome is VerifyOutcome.OK:
                survived.append((i, mask))

    golden_diff = [name for name, data in golden_objects().items() if (GOLDEN / name).read_bytes() != data]
    ok = not roundtrip_failures and not survived and not golden_diff
    detail = (
        f"10^4 block+quote round-trips, {roundtrip_failures} failed; "
        f"{len(quote_raw) * 3} byte flips, {len(survived)} still verify; golden diffs={golden_diff}"
    )
    verdict(8, "codec fidelity", ok, detail)
