"""Genesis documents: chain id, program, balances, vendor and enclave rosters.

The on-disk form is YAML. Keys are derived deterministically from seeds so a
genesis file fully reproduces every identity in a run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import yaml

from pote import codec, crypto
from pote.attestation import (
    EnclaveIdentity,
    VendorAuthority,
    VendorRegistry,
    register_vendor,
)
from pote.chain import ChainState, ProgramDescriptor, measure_program
from pote.selection import EnclaveRoster

DEFAULT_PROGRAM = ProgramDescriptor("pote-ledger", 1, 0)


def derive_key_seed(run_seed: int, role: bytes, *indices: int) -> bytes:
    preimage = b"POTE_KEY_V1" + role + codec.encode_u64(run_seed)
    for i in indices:
        preimage += codec.encode_u32(i)
    return codec.hash(preimage, codec.HashAlgorithm.SHA256)


def account_id(index: int) -> bytes:
    return codec.hash(b"POTE_ACCT_V1" + codec.encode_u32(index), codec.HashAlgorithm.SHA256)


@dataclass
class VendorSpec:
    name: str
    authority_seed: bytes
    enclave_seeds: list[bytes] = field(default_factory=list)


@dataclass
class Genesis:
    chain_id: int
    program: ProgramDescriptor
    k: int
    balances: dict[bytes, int]
    vendors: list[VendorSpec]
    hash_algorithm: int = int(codec.HashAlgorithm.SHA256)

    @classmethod
    def generate(
        cls,
        *,
        chain_id: int,
        vendor_names: Sequence[str],
        enclaves_per_vendor: Sequence[int],
        k: int,
        accounts: int,
        initial_balance: int,
        run_seed: int,
        program: ProgramDescriptor = DEFAULT_PROGRAM,
    ) -> "Genesis":
        vendors = []
        for vi, (name, count) in enumerate(zip(vendor_names, enclaves_per_vendor)):
            vendors.append(
                VendorSpec(
                    name=name,
                    authority_seed=derive_key_seed(run_seed, b"vendor", vi),
                    enclave_seeds=[derive_key_seed(run_seed, b"enclave", vi, i) for i in range(count)],
                )
            )
        balances = {account_id(i): initial_balance for i in range(accounts)}
        return cls(chain_id, program, k, balances, vendors)

    def measurement(self) -> bytes:
        return measure_program(self.program)

    def initial_state(self) -> ChainState:
        return ChainState({acct: (bal, 0) for acct, bal in self.balances.items()})

    def build(self) -> "GenesisSetup":
        measurement = self.measurement()
        registry = VendorRegistry(measurement, self.k, self.chain_id)
        authorities: dict[int, VendorAuthority] = {}
        enclaves: list[EnclaveIdentity] = []
        for spec in self.vendors:
            kp = crypto.keygen(spec.authority_seed)
            vid = register_vendor(registry, kp.public_key, spec.name)
            authorities[vid] = VendorAuthority(vid, kp, measurement)
            for i, s in enumerate(spec.enclave_seeds):
                enclaves.append(EnclaveIdentity(vid, i, crypto.keygen(s)))
        registry.check()
        roster = EnclaveRoster.build(registry, enclaves)
        return GenesisSetup(registry, authorities, enclaves, roster, self.initial_state())

    def to_dict(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "hash_algorithm": self.hash_algorithm,
            "program": {
                "name": self.program.name,
                "version": self.program.version,
                "rule_flags": self.program.rule_flags,
            },
            "diversity_threshold_k": self.k,
            "accounts": [
                {"id": acct.hex(), "balance": bal} for acct, bal in sorted(self.balances.items())
            ],
            "vendors": [
                {
                    "name": v.name,
                    "authority_seed": v.authority_seed.hex(),
                    "enclave_seeds": [s.hex() for s in v.enclave_seeds],
                }
                for v in self.vendors
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Genesis":
        prog = doc["program"]
        return cls(
            chain_id=int(doc["chain_id"]),
            program=ProgramDescriptor(str(prog["name"]), int(prog["version"]), int(prog["rule_flags"])),
            k=int(doc["diversity_threshold_k"]),
            balances={bytes.fromhex(a["id"]): int(a["balance"]) for a in doc["accounts"]},
            vendors=[
                VendorSpec(
                    name=str(v["name"]),
                    authority_seed=bytes.fromhex(v["authority_seed"]),
                    enclave_seeds=[bytes.fromhex(s) for s in v["enclave_seeds"]],
                )
                for v in doc["vendors"]
            ],
            hash_algorithm=int(doc.get("hash_algorithm", 1)),
        )


@dataclass
class GenesisSetup:
    registry: VendorRegistry
    authorities: dict[int, VendorAuthority]
    enclaves: list[EnclaveIdentity]
    roster: EnclaveRoster
    state: ChainState


def load_genesis(path: str | Path) -> Genesis:
    with open(path) as fh:
        return Genesis.from_dict(yaml.safe_load(fh))


def dump_genesis(genesis: Genesis, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(genesis.to_dict(), fh, sort_keys=False)
