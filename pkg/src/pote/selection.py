"""Proposer election from a public hash-chain seed.

Two draws: a vendor class uniformly from the eligible vendors, then an
enclave within that vendor from an independent re-hash of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from pote import codec
from pote.attestation import EnclaveIdentity, VendorRegistry, VendorStatus

SEED_DOMAIN_TAG = b"POTE_SEED_V1"


class EmptyRoster(Exception):
    pass


@dataclass(frozen=True)
class RoundSeed:
    value: bytes
    height: int
    attempt: int = 0


def derive_seed(parent_block_hash: bytes, height: int, attempt: int = 0) -> RoundSeed:
    """``hash(tag || parent_hash || height_le64)``; retries append the attempt."""
    if height < 1:
        raise ValueError("seeds are defined for height >= 1")
    preimage = SEED_DOMAIN_TAG + codec.check_digest(parent_block_hash) + codec.encode_u64(height)
    if attempt:
        preimage += codec.encode_u32(attempt)
    return RoundSeed(codec.hash(preimage), height, attempt)


@dataclass
class EnclaveRoster:
    by_vendor: dict[int, tuple[EnclaveIdentity, ...]] = field(default_factory=dict)

    @classmethod
    def build(
        cls, registry: VendorRegistry, enclaves: Iterable[EnclaveIdentity]
    ) -> "EnclaveRoster":
        """Group enclaves by vendor, keeping only vendors active in ``registry``."""
        active = set(registry.active_vendor_ids())
        grouped: dict[int, list[EnclaveIdentity]] = {}
        for e in enclaves:
            if e.vendor_id in active:
                grouped.setdefault(e.vendor_id, []).append(e)
        return cls({
            v: tuple(sorted(es, key=lambda e: e.enclave_index))
            for v, es in sorted(grouped.items())
        })

    def eligible_vendors(self) -> list[int]:
        return sorted(v for v, es in self.by_vendor.items() if es)


def _u64_prefix(digest: bytes) -> int:
    return int.from_bytes(digest[:8], "little")


def sample_vendor(seed: RoundSeed, roster: EnclaveRoster) -> int:
    eligible = roster.eligible_vendors()
    if not eligible:
        raise EmptyRoster("no eligible vendor")
    return eligible[_u64_prefix(seed.value) % len(eligible)]


def select_proposer(seed: RoundSeed, roster: EnclaveRoster) -> EnclaveIdentity:
    vendor = sample_vendor(seed, roster)
    enclaves = roster.by_vendor[vendor]
    w = _u64_prefix(codec.hash(seed.value + bytes([vendor])))
    return enclaves[w % len(enclaves)]


def vendor_counts(roster: EnclaveRoster) -> Mapping[int, int]:
    return {v: len(es) for v, es in roster.by_vendor.items()}
