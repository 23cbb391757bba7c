"""Parameter sweeps: commit latency against network size, throughput against load."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from importlib import resources
from typing import Sequence

from pote.harness.metrics import MetricsSummary, median, tps
from pote.simnet.config import Scenario, parse_scenario
from pote.simnet.engine import run_scenario

SLOT_MS = 12_000
TPS_MODES = ("by_processing_time", "by_block_size")


def bundled_scenario(name: str) -> Scenario:
    """One of the scenarios shipped with the package, by file stem."""
    text = resources.files("pote").joinpath("scenarios", f"{name}.yaml").read_text()
    return parse_scenario(text)


def _summary(args: tuple[Scenario, int]) -> MetricsSummary:
    scenario, seed = args
    return MetricsSummary.from_result(run_scenario(scenario, seed))


def _map(jobs: list, workers: int) -> list:
    # Results come back in input order regardless of completion order.
    if workers <= 1:
        return [_summary(j) for j in jobs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(_summary, jobs))


def sweep_latency(
    base: Scenario, counts: Sequence[int], seed: int | None = None, workers: int = 1
) -> list[MetricsSummary]:
    """One summary per validator count, validators spread round-robin over vendors."""
    counts = list(counts)
    if not counts:
        raise ValueError("counts must be non-empty")
    if counts != sorted(counts) or len(set(counts)) != len(counts):
        raise ValueError("counts must be strictly ascending")
    seed = base.seed if seed is None else seed
    return _map([(base.with_validators(n), seed) for n in counts], workers)


@dataclass(frozen=True)
class TpsRow:
    label: str
    tx_per_block: int
    # What one block's worth of time is measured by: commit latency for the
    # attested pipeline, the block interval for the slotted baseline.
    basis_ms: Fraction
    basis: str
    tps: Fraction

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "tx_per_block": self.tx_per_block,
            "basis": self.basis,
            "basis_ms": float(self.basis_ms) if self.basis_ms.denominator != 1 else int(self.basis_ms),
            "tps": round(float(self.tps), 1),
            "tps_exact": [self.tps.numerator, self.tps.denominator],
        }


def tps_probe(tx_per_block: int, processing_ms: int, template: Scenario | None = None) -> Scenario:
    """A scenario whose only delay is executing ``tx_per_block`` in ``processing_ms``."""
    if tx_per_block <= 0 or processing_ms <= 0:
        raise ValueError("points must be positive")
    base = template or bundled_scenario("tps")
    delay = replace(base.delay, exec_ms_per_100tx=Fraction(processing_ms * 100, tx_per_block))
    workload = replace(base.workload, tx_per_block=tx_per_block)
    return base.replace(delay=delay, workload=workload)


def measure_tps(scenario: Scenario, seed: int | None = None) -> TpsRow:
    result = run_scenario(scenario, seed)
    summary = MetricsSummary.from_result(result)
    if summary.median_latency_ms is None:
        raise RuntimeError("no round finalized; throughput undefined")
    tx = scenario.workload.tx_per_block
    return TpsRow(
        f"{tx} tx / {summary.median_latency_ms} ms",
        tx,
        summary.median_latency_ms,
        "commit_latency",
        summary.tps,
    )


def slotted_baseline(tx_per_block: int = 1000, slot_ms: int = SLOT_MS, seed: int | None = None) -> TpsRow:
    """Throughput of the slot-timed baseline, from its measured block interval."""
    base = bundled_scenario("slotted")
    protocol = replace(base.protocol, slot_ms=slot_ms, round_timeout_ms=3 * slot_ms)
    workload = replace(base.workload, tx_per_block=tx_per_block)
    result = run_scenario(base.replace(protocol=protocol, workload=workload), seed)
    proposed = [r.t_proposed_ms for r in result.records if not r.stalled and r.t_proposed_ms is not None]
    intervals = [b - a for a, b in zip(proposed, proposed[1:])]
    if not intervals:
        raise RuntimeError("slotted baseline needs at least two finalized rounds")
    interval = median(intervals)
    return TpsRow(f"slotted baseline {tx_per_block} tx / {slot_ms} ms slot", tx_per_block, interval, "block_interval", tps(tx_per_block, interval))


def sweep_tps(
    mode: str, points: Sequence[int], seed: int | None = None, *, baseline: bool = True
) -> list[TpsRow]:
    """``by_processing_time``: 1000 tx, points are ms; ``by_block_size``: 100 ms, points are tx counts."""
    if mode not in TPS_MODES:
        raise ValueError(f"mode must be one of {TPS_MODES}")
    points = list(points)
    if not points or any(p <= 0 for p in points):
        raise ValueError("points must be positive")
    rows = []
    for p in points:
        probe = tps_probe(1000, p) if mode == "by_processing_time" else tps_probe(p, 100)
        rows.append(measure_tps(probe, seed))
    if baseline:
        rows.append(slotted_baseline(1000, SLOT_MS, seed))
    return rows
