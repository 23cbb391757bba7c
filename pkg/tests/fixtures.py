"""Pinned, fully deterministic protocol objects shared by the tests.

``python tests/fixtures.py`` rewrites the files in ``tests/golden``; the
golden tests then compare fresh encodings against those bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from pote.attestation import AttestationQuote, EnclaveIdentity, VendorAuthority
from pote.chain import Block, ChainState, Transaction, build_block, seal_block
from pote.genesis import Genesis, GenesisSetup, account_id
from pote.validation import LocalChain, RoundContext

GOLDEN = Path(__file__).parent / "golden"


@dataclass
class World:
    setup: GenesisSetup
    chain: LocalChain

    @property
    def registry(self):
        return self.setup.registry

    def context(self, attempt: int = 0) -> RoundContext:
        return self.chain.context(attempt)

    def proposer(self, ctx: RoundContext) -> EnclaveIdentity:
        for e in self.setup.enclaves:
            if e.public_key == ctx.expected_proposer.public_key:
                return e
        raise LookupError("elected enclave not in world")

    def authority(self, vendor_id: int) -> VendorAuthority:
        return self.setup.authorities[vendor_id]

    def others(self, ctx: RoundContext) -> list[EnclaveIdentity]:
        return [e for e in self.setup.enclaves if e.public_key != ctx.expected_proposer.public_key]

    def unsealed(self, txs=None, timestamp: int = 1_000, ctx: RoundContext | None = None) -> Block:
        ctx = ctx or self.context()
        txs = default_txs() if txs is None else txs
        return build_block(self.chain.head, self.chain.state, txs, timestamp, self.proposer(ctx), self.registry)

    def sealed(self, txs=None, timestamp: int = 1_000, ctx: RoundContext | None = None) -> Block:
        ctx = ctx or self.context()
        block = self.unsealed(txs, timestamp, ctx)
        prop = self.proposer(ctx)
        return seal_block(block, prop, self.authority(prop.vendor_id), ctx.expected_nonce)


def default_txs() -> list[Transaction]:
    a, b, c = account_id(0), account_id(1), account_id(2)
    return [
        Transaction(a, b, 4, 0),
        Transaction(a, b, 4, 1),
        Transaction(b, c, 5000, 0),  # overdraw: skipped
        Transaction(c, a, 7, 0),
    ]


def make_world(seed: int = 42, enclaves=(2, 2, 2), k: int = 3, accounts: int = 8) -> World:
    names = ["sgx", "sev", "tdx", "cca", "keystone"][: len(enclaves)]
    genesis = Genesis.generate(
        chain_id=1,
        vendor_names=names,
        enclaves_per_vendor=list(enclaves),
        k=k,
        accounts=accounts,
        initial_balance=1000,
        run_seed=seed,
    )
    setup = genesis.build()
    chain = LocalChain.from_genesis(setup.registry, setup.roster, setup.state)
    return World(setup, chain)


def golden_objects() -> dict[str, bytes]:
    w = make_world()
    ctx = w.context()
    block = w.sealed()
    stale = RoundContext(
        expected_height=ctx.expected_height,
        chain_id=ctx.chain_id,
        expected_nonce=bytes(32),
        expected_parent_hash=ctx.expected_parent_hash,
        expected_proposer=ctx.expected_proposer,
    )
    empty = ChainState({})
    return {
        "block.bin": block.to_bytes(),
        "quote.bin": block.header.attestation_quote,
        "genesis_header.bin": w.chain.head.to_bytes(),
        "empty_state.bin": _encode(empty),
        "registry.json": _json(w.registry.to_dict()),
        "context.json": _json(ctx.to_dict()),
        "context_stale.json": _json(stale.to_dict()),
    }


def _encode(obj) -> bytes:
    from pote import codec

    return codec.encode(obj)


def _json(doc) -> bytes:
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode()


def load_quote(name: str = "quote.bin") -> AttestationQuote:
    return AttestationQuote.from_bytes((GOLDEN / name).read_bytes())


def write_golden() -> None:
    GOLDEN.mkdir(exist_ok=True)
    for name, data in golden_objects().items():
        (GOLDEN / name).write_bytes(data)


if __name__ == "__main__":
    write_golden()
