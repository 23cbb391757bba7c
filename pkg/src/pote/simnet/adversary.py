"""Block-level attacks the simulator can inject.

Each function takes an honestly sealed block plus whatever keys the attacker
controls and returns the artifact the attacker actually broadcasts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from pote.attestation import (
    EnclaveIdentity,
    QuoteUserData,
    VendorAuthority,
    issue_quote,
)
from pote.chain import (
    Block,
    BlockBody,
    ChainState,
    ProgramDescriptor,
    measure_program,
    seal_block,
    transactions_root,
)
from pote.codec import ZERO_DIGEST, hash as digest
from pote.validation import RoundContext

ATTACKER_ACCOUNT = digest(b"POTE_ATTACKER_V1")
MINTED_AMOUNT = 10**9


def malicious_program(program: ProgramDescriptor) -> ProgramDescriptor:
    """The modified program C' a colluding proposer actually runs."""
    return dataclasses.replace(program, name=program.name + "-mint")


def _alter_first_tx(block: Block) -> BlockBody:
    body = block.body
    tx = body.transactions[0]
    altered = dataclasses.replace(tx, amount=tx.amount ^ 1)
    return BlockBody((altered,) + body.transactions[1:], body.post_state_commitment)


def tamper_after_attest(block: Block) -> Block:
    """Flip one deterministic bit of the body after the block was sealed."""
    if block.body.transactions:
        return Block(block.header, _alter_first_tx(block))
    root = bytearray(block.body.post_state_commitment)
    root[0] ^= 1
    return Block(block.header, BlockBody((), bytes(root)))


def keep_quote_alter_block(block: Block, authority: VendorAuthority) -> Block:
    """Alter the body and present a quote that matches it, keeping the old signature.

    The vendor quote is reissued over the altered commitment (so attestation
    and commitment checks pass) but the enclave never signs the altered
    block; the original enclave signature is carried over verbatim.
    """
    if block.body.transactions:
        body = _alter_first_tx(block)
        header = dataclasses.replace(block.header, tx_root=transactions_root(body.transactions))
    else:
        body = block.body
        header = dataclasses.replace(block.header, timestamp_ms=block.header.timestamp_ms + 1)
    altered = Block(header, body)
    old = block.quote()
    ud = dataclasses.replace(old.user_data, commitment=altered.commitment())
    quote = issue_quote(authority, authority.canonical_measurement, ud)
    return Block(
        dataclasses.replace(header, attestation_quote=quote.to_bytes(), enclave_signature=block.header.enclave_signature),
        body,
    )


def replay_old_quote(
    block: Block,
    proposer: EnclaveIdentity,
    authority: VendorAuthority,
    stale_height: int,
    stale_nonce: bytes,
) -> Block:
    """Reseal the block with round metadata from the previous height."""
    unsealed = block.blanked(quote=True, signature=True)
    ud = QuoteUserData(
        pk_block=proposer.public_key,
        commitment=unsealed.commitment(),
        height=stale_height,
        chain_id=block.header.chain_id,
        nonce=stale_nonce,
    )
    return seal_block(unsealed, proposer, authority, stale_nonce, user_data=ud)


def stale_round(parent_ctx: RoundContext | None) -> tuple[int, bytes]:
    """Height and nonce of the previous round, or the all-zero genesis stand-in."""
    if parent_ctx is None:
        return 0, ZERO_DIGEST
    return parent_ctx.expected_height, parent_ctx.expected_nonce


def forge_state(honest: ChainState) -> ChainState:
    """Post-state of C': honest execution plus coins minted to the attacker."""
    accounts = dict(honest.items())
    bal, nonce = accounts.get(ATTACKER_ACCOUNT, (0, 0))
    accounts[ATTACKER_ACCOUNT] = (bal + MINTED_AMOUNT, nonce)
    return ChainState(accounts)


def forged_block(
    unsealed: Block,
    forged: ChainState,
    proposer: EnclaveIdentity,
    authority: VendorAuthority,
    nonce: bytes,
    malicious_measurement: bytes,
) -> Block:
    """Seal a block carrying a forged state root with a quote claiming the canonical code."""
    root = forged.commitment()
    header = dataclasses.replace(unsealed.header, state_root=root)
    block = Block(header, BlockBody(unsealed.body.transactions, root))
    return seal_block(
        block,
        proposer,
        authority,
        nonce,
        measurement=malicious_measurement,
        claim=authority.canonical_measurement,
    )


@dataclass(frozen=True)
class Intercept:
    """Inputs an adversary needs to rewrite a proposer's block."""

    proposer: EnclaveIdentity
    authority: VendorAuthority
    stale_height: int
    stale_nonce: bytes


def apply_adversary(mode: str, block: Block, env: Intercept) -> Block:
    if mode == "tamper_after_attest":
        return tamper_after_attest(block)
    if mode == "keep_quote_alter_block":
        return keep_quote_alter_block(block, env.authority)
    if mode == "replay_old_quote":
        return replay_old_quote(block, env.proposer, env.authority, env.stale_height, env.stale_nonce)
    raise ValueError(f"{mode} does not rewrite blocks")


def malicious_measurement(program: ProgramDescriptor) -> bytes:
    return measure_program(malicious_program(program))
