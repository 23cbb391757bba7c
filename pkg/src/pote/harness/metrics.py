"""Aggregation of round records into per-run summaries."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

from pote.simnet.engine import SimResult


def median(values: list[int]) -> Fraction:
    """Exact median; the mean of the middle pair for even counts."""
    if not values:
        raise ValueError("median of no values")
    s = sorted(values)
    mid = len(s) // 2
    if len(s) % 2:
        return Fraction(s[mid])
    return Fraction(s[mid - 1] + s[mid], 2)


def percentile(values: list[int], q: int) -> int:
    """Nearest-rank percentile."""
    s = sorted(values)
    rank = max(1, -(-q * len(s) // 100))
    return s[rank - 1]


def tps(tx_per_block: int, latency_ms: Fraction | int) -> Fraction:
    """Transactions per second for one block committed every ``latency_ms``."""
    return Fraction(tx_per_block * 1000) / Fraction(latency_ms)


def _number(x: Fraction) -> int | float:
    return int(x) if x.denominator == 1 else float(x)


@dataclass(frozen=True)
class MetricsSummary:
    validator_count: int
    tx_per_block: int
    rounds: int
    finalized_rounds: int
    stalled_rounds: int
    median_latency_ms: Fraction | None
    p95_latency_ms: int | None
    rejections: dict[str, int]
    tps: Fraction | None

    @classmethod
    def from_result(cls, result: SimResult) -> "MetricsSummary":
        latencies = [v for rec in result.records for v in rec.commit_latencies().values()]
        hist: Counter = Counter()
        for rec in result.records:
            hist.update(rec.rejection_counts())
        med = median(latencies) if latencies else None
        tx = result.scenario.workload.tx_per_block
        return cls(
            validator_count=len(result.nodes),
            tx_per_block=tx,
            rounds=len(result.records),
            finalized_rounds=sum(1 for r in result.records if not r.stalled),
            stalled_rounds=sum(1 for r in result.records if r.stalled),
            median_latency_ms=med,
            p95_latency_ms=percentile(latencies, 95) if latencies else None,
            rejections=dict(sorted(hist.items())),
            tps=tps(tx, med) if med else None,
        )

    def to_dict(self) -> dict:
        return {
            "validator_count": self.validator_count,
            "tx_per_block": self.tx_per_block,
            "rounds": self.rounds,
            "finalized_rounds": self.finalized_rounds,
            "stalled_rounds": self.stalled_rounds,
            "median_latency_ms": None if self.median_latency_ms is None else _number(self.median_latency_ms),
            "p95_latency_ms": self.p95_latency_ms,
            "rejections": self.rejections,
            "tps": None if self.tps is None else round(float(self.tps), 1),
            "tps_exact": None if self.tps is None else [self.tps.numerator, self.tps.denominator],
        }
