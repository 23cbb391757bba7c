"""Per-round observations emitted by the simulator."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field


def _keyed(d: dict) -> dict:
    return {str(k): v for k, v in sorted(d.items())}


@dataclass
class RoundRecord:
    """What happened in one (height, attempt) round, as seen by every validator.

    Times are simulated milliseconds. ``honest`` lists the validators that
    followed the protocol in this round; adversarial proposers and colluders
    are excluded from it.
    """

    height: int
    attempt: int
    proposer: int
    proposer_vendor: int
    honest: list[int]
    t_proposed_ms: int | None = None
    tx_count: int = 0
    skip_bitmap: str = ""
    block_hash: str = ""
    t_first_observed_ms: dict[int, int] = field(default_factory=dict)
    t_finalized_ms: dict[int, int] = field(default_factory=dict)
    finalized_hash: dict[int, str] = field(default_factory=dict)
    rejections: dict[int, list[str]] = field(default_factory=dict)
    timeouts: list[int] = field(default_factory=list)
    dual_path_ok: dict[int, bool] = field(default_factory=dict)
    ops: dict[int, dict[str, int]] = field(default_factory=dict)
    stalled: bool = False

    def observe(self, node: int, t: int) -> None:
        self.t_first_observed_ms.setdefault(node, t)

    def reject(self, node: int, reason: str) -> None:
        self.rejections.setdefault(node, []).append(reason)

    def commit_latencies(self, nodes: list[int] | None = None) -> dict[int, int]:
        nodes = self.honest if nodes is None else nodes
        out = {}
        for n in nodes:
            if n in self.t_finalized_ms and n in self.t_first_observed_ms:
                out[n] = self.t_finalized_ms[n] - self.t_first_observed_ms[n]
        return out

    def rejection_counts(self) -> Counter:
        c: Counter = Counter()
        for reasons in self.rejections.values():
            c.update(reasons)
        return c

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "attempt": self.attempt,
            "proposer": self.proposer,
            "proposer_vendor": self.proposer_vendor,
            "honest": list(self.honest),
            "t_proposed_ms": self.t_proposed_ms,
            "tx_count": self.tx_count,
            "skip_bitmap": self.skip_bitmap,
            "block_hash": self.block_hash,
            "t_first_observed_ms": _keyed(self.t_first_observed_ms),
            "t_finalized_ms": _keyed(self.t_finalized_ms),
            "finalized_hash": _keyed(self.finalized_hash),
            "rejections": _keyed(self.rejections),
            "timeouts": sorted(self.timeouts),
            "dual_path_ok": _keyed(self.dual_path_ok),
            "ops": {str(k): dict(sorted(v.items())) for k, v in sorted(self.ops.items())},
            "stalled": self.stalled,
        }


def pack_bitmap(flags) -> str:
    """Skip flags packed LSB-first into bytes, hex encoded."""
    out = bytearray((len(flags) + 7) // 8)
    for i, f in enumerate(flags):
        if f:
            out[i // 8] |= 1 << (i % 8)
    return out.hex()


def unpack_bitmap(hexstr: str, n: int) -> list[int]:
    raw = bytes.fromhex(hexstr)
    return [(raw[i // 8] >> (i % 8)) & 1 for i in range(n)]
