"""``pote`` command line: run scenarios, sweeps, standalone verification, op counts.

Exit codes: 0 success (or accept), 1 reject, 2 invalid input, 3 a liveness
stall occurred during ``run``.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path
from typing import Sequence

from pote import codec
from pote.attestation import VendorRegistry
from pote.chain import Block
from pote.harness.metrics import MetricsSummary
from pote.harness.sweeps import TPS_MODES, bundled_scenario, sweep_latency, sweep_tps
from pote.simnet.config import ConfigInvalid, Scenario, load_scenario
from pote.simnet.engine import SimResult, run_scenario
from pote.validation import Reason, RoundContext, reject, validate_block

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_INVALID = 2
EXIT_STALL = 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}") from exc


def _dump(doc, fh) -> None:
    json.dump(doc, fh, sort_keys=True, indent=2)
    fh.write("\n")


def _scenario(path: str | None, fallback: str) -> Scenario:
    return load_scenario(path) if path else bundled_scenario(fallback)


def write_run(result: SimResult, out: Path) -> MetricsSummary:
    """Write ``rounds.jsonl`` and ``summary.json`` under ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "rounds.jsonl").write_text(result.records_jsonl())
    summary = MetricsSummary.from_result(result)
    doc = summary.to_dict()
    doc["seed"] = result.seed
    with open(out / "summary.json", "w") as fh:
        _dump(doc, fh)
    return summary


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    seed = scenario.seed if args.seed is None else args.seed
    result = run_scenario(scenario, seed)
    summary = write_run(result, Path(args.out))
    print(
        f"{summary.finalized_rounds}/{summary.rounds} rounds finalized, "
        f"median commit latency {summary.to_dict()['median_latency_ms']} ms"
    )
    return EXIT_STALL if result.stalls else EXIT_OK


def cmd_sweep_latency(args) -> int:
    base = _scenario(args.scenario, "latency")
    rows = sweep_latency(base, args.counts, args.seed, workers=args.workers)
    print(f"{'validators':>10} {'median_ms':>10} {'p95_ms':>7} {'stalled':>7}")
    for row in rows:
        d = row.to_dict()
        print(f"{d['validator_count']:>10} {d['median_latency_ms']!s:>10} {d['p95_latency_ms']!s:>7} {d['stalled_rounds']:>7}")
    if args.out:
        with open(args.out, "w") as fh:
            _dump([r.to_dict() for r in rows], fh)
    return EXIT_OK


def cmd_sweep_tps(args) -> int:
    rows = sweep_tps(args.mode, args.points, args.seed)
    print(f"{'row':<44} {'tps':>10}")
    for row in rows:
        print(f"{row.label:<44} {float(row.tps):>10.1f}")
    if args.out:
        with open(args.out, "w") as fh:
            _dump([r.to_dict() for r in rows], fh)
    return EXIT_OK


def load_verifier_inputs(block_path: str, registry_path: str, context_path: str):
    """Read a block file (canonical bytes) and registry/context JSON documents.

    Raises ValueError if the registry or context documents are unusable.
    """
    raw = Path(block_path).read_bytes()
    try:
        registry_doc = json.loads(Path(registry_path).read_text())
        context_doc = json.loads(Path(context_path).read_text())
        registry = VendorRegistry.from_dict(registry_doc)
        ctx = RoundContext.from_dict(context_doc)
        alg = codec.HashAlgorithm(int(registry_doc.get("hash_algorithm", 1)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"unusable registry or context: {exc}") from exc
    return raw, registry, ctx, alg


def cmd_verify(args) -> int:
    try:
        raw, registry, ctx, alg = load_verifier_inputs(args.block, args.registry, args.context)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    previous = codec.set_hash_algorithm(alg)
    try:
        try:
            block = Block.from_bytes(raw)
        except codec.MalformedEncoding as exc:
            print(reject(Reason.MALFORMED))
            print(f"error: block file does not decode: {exc}", file=sys.stderr)
            return EXIT_INVALID
        verdict = validate_block(block, registry, ctx)
    finally:
        codec.set_hash_algorithm(previous)
    print(verdict)
    return EXIT_OK if verdict.accepted else EXIT_REJECT


def counter_report(result: SimResult) -> dict:
    rounds = []
    totals: Counter = Counter()
    for rec in result.records:
        per = {}
        for node, ops in sorted(rec.ops.items()):
            per[str(node)] = {op: ops.get(op, 0) for op in ("hash", "sign", "verify", "quote_issue", "quote_verify")}
            totals.update(ops)
        rounds.append({"height": rec.height, "attempt": rec.attempt, "validators": per})
    return {"rounds": rounds, "totals": dict(sorted(totals.items()))}


def cmd_counters(args) -> int:
    scenario = load_scenario(args.scenario)
    result = run_scenario(scenario, args.seed)
    report = counter_report(result)
    if args.out:
        with open(args.out, "w") as fh:
            _dump(report, fh)
    else:
        _dump(report, sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pote", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario and write round records plus a summary")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-latency", help="median commit latency per validator count")
    p.add_argument("--scenario", help="base scenario (default: bundled latency-only calibration)")
    p.add_argument("--counts", type=_int_list, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_latency)

    p = sub.add_parser("sweep-tps", help="throughput per processing time or block size")
    p.add_argument("--mode", choices=TPS_MODES, required=True)
    p.add_argument("--points", type=_int_list, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_tps)

    p = sub.add_parser("verify", help="check one block against a registry and round context")
    p.add_argument("--block", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--context", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("counters", help="per-validator, per-round operation counts")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_counters)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
